//! Rigid-body math, the pinhole camera model and ray generation.
//!
//! Camera frames are right-handed with +z forward, +x right and +y down.
//! Depth is measured along the ray (not along the optical axis).

use nalgebra::{Matrix3, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Twist = Vector6<f64>;

/// Rigid transform `x -> rotation * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Mat3::identity(), t)
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(
            Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            Vec3::zeros(),
        )
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(
            Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            Vec3::zeros(),
        )
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(
            Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            Vec3::zeros(),
        )
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut rotation = self.rotation * other.rotation;
        if orthonormality_error(&rotation) > 1e-12 {
            rotation = orthonormalize(&rotation);
        }
        Pose::new(
            rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `anchor⁻¹ ∘ pose`, evaluated so that the result only depends on the
    /// multiset of elementary products.
    ///
    /// Translations are differenced before rotating and every dot product is
    /// summed in sorted order. Applying the same exactly-representable rigid
    /// transform (signed axis permutation, translation that adds without
    /// rounding) to both arguments therefore yields a bitwise identical result.
    pub fn between(anchor: &Pose, pose: &Pose) -> Pose {
        let ra = &anchor.rotation;
        let rp = &pose.rotation;
        let mut rotation = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                rotation[(i, j)] = sorted_sum3([
                    ra[(0, i)] * rp[(0, j)],
                    ra[(1, i)] * rp[(1, j)],
                    ra[(2, i)] * rp[(2, j)],
                ]);
            }
        }
        let d = pose.translation - anchor.translation;
        let mut translation = Vec3::zeros();
        for i in 0..3 {
            translation[i] = sorted_sum3([ra[(0, i)] * d[0], ra[(1, i)] * d[1], ra[(2, i)] * d[2]]);
        }
        Pose::new(rotation, translation)
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        orthonormality_error(&self.rotation) <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Unit quaternion `[x, y, z, w]` with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        let mut out = [q.i, q.j, q.k, q.w];
        if out[3] < 0.0 {
            out.iter_mut().for_each(|v| *v = -*v);
        }
        out
    }

    pub fn from_quaternion(q: [f64; 4], translation: Vec3) -> Pose {
        let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q[3], q[0], q[1], q[2],
        ));
        Pose::new(*uq.to_rotation_matrix().matrix(), translation)
    }

    /// Row-major rotation followed by translation.
    pub fn to_array(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[0],
            t[1],
            t[2],
        ]
    }

    pub fn from_array(a: &[f64; 12]) -> Pose {
        Pose::new(
            Mat3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]),
            Vec3::new(a[9], a[10], a[11]),
        )
    }
}

fn sorted_sum3(mut terms: [f64; 3]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms[0] + terms[1] + terms[2]
}

fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).amax()
}

fn orthonormalize(r: &Mat3) -> Mat3 {
    let x = r.column(0).normalize();
    let y = (r.column(1) - x * x.dot(&r.column(1))).normalize();
    let z = x.cross(&y);
    Mat3::from_columns(&[x, y, z])
}

pub fn hat(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

pub fn rotation_angle(r: &Mat3) -> f64 {
    let s = (vee(&(r - r.transpose())) * 0.5).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// Exponential map of a twist `(ρ, ω)`: translation part first, rotation second.
pub fn se3_exp(xi: &Twist) -> Pose {
    let rho = Vec3::new(xi[0], xi[1], xi[2]);
    let omega = Vec3::new(xi[3], xi[4], xi[5]);
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(&omega);
    let w2 = w * w;
    // a = sinθ/θ, b = (1-cosθ)/θ², c = (θ-sinθ)/θ³
    let (a, b, c) = if theta < 1e-4 {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
            1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
        )
    } else {
        let (s, co) = theta.sin_cos();
        (s / theta, (1.0 - co) / theta2, (theta - s) / (theta2 * theta))
    };
    let rotation = Mat3::identity() + w * a + w2 * b;
    let v = Mat3::identity() + w * b + w2 * c;
    Pose::new(rotation, v * rho)
}

/// Logarithm of a pose; fails when the rotation angle is within 1e-6 of π.
pub fn se3_log(pose: &Pose) -> Result<Twist> {
    let omega = so3_log(&pose.rotation)?;
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(&omega);
    // V⁻¹ = I - ½W + d·W², d = (1 - θ sinθ / (2(1-cosθ))) / θ²
    let d = if theta < 1e-4 {
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    } else {
        let (s, c) = theta.sin_cos();
        (1.0 - theta * s / (2.0 * (1.0 - c))) / theta2
    };
    let v_inv = Mat3::identity() - w * 0.5 + w * w * d;
    let rho = v_inv * pose.translation;
    Ok(Twist::new(rho[0], rho[1], rho[2], omega[0], omega[1], omega[2]))
}

pub fn so3_log(r: &Mat3) -> Result<Vec3> {
    let axis_sin = vee(&(r - r.transpose())) * 0.5;
    let s = axis_sin.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if theta > std::f64::consts::PI - 1e-6 {
        return Err(Error::IllConditionedLog(theta));
    }
    let scale = if theta < 1e-4 {
        // θ / sinθ
        1.0 + theta * theta / 6.0 + 7.0 * theta.powi(4) / 360.0
    } else {
        theta / theta.sin()
    };
    Ok(axis_sin * scale)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Unit viewing direction of an integer pixel in the camera frame.
    /// Integer coordinates address pixel centers.
    pub fn camera_direction(&self, u: u32, v: u32) -> Vec3 {
        Vec3::new(
            (u as f64 - self.cx) / self.fx,
            (v as f64 - self.cy) / self.fy,
            1.0,
        )
        .normalize()
    }

    /// Projects a camera-frame point; `None` behind the camera.
    pub fn project_camera(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p[2] <= 0.0 {
            return None;
        }
        Some((
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        ))
    }

    /// Projects a world point seen from `pose` (world ← camera).
    pub fn project(&self, pose: &Pose, p: &Vec3) -> Option<(f64, f64)> {
        let local = pose.rotation.transpose() * (p - pose.translation);
        self.project_camera(&local)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub pixel: (u32, u32),
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    pub fn transformed(&self, pose: &Pose) -> Ray {
        Ray {
            origin: pose.transform_point(&self.origin),
            direction: pose.transform_vector(&self.direction),
            pixel: self.pixel,
        }
    }
}

pub fn pixel_to_ray(intr: &Intrinsics, pose: &Pose, u: u32, v: u32) -> Result<Ray> {
    if u >= intr.width || v >= intr.height {
        return Err(Error::PixelOutOfBounds {
            u,
            v,
            width: intr.width,
            height: intr.height,
        });
    }
    Ok(Ray {
        origin: pose.translation,
        direction: pose.rotation * intr.camera_direction(u, v),
        pixel: (u, v),
    })
}

/// Point at ray-length `depth` along the ray through pixel `(u, v)`.
pub fn back_project(intr: &Intrinsics, pose: &Pose, u: u32, v: u32, depth: f64) -> Result<Vec3> {
    Ok(pixel_to_ray(intr, pose, u, v)?.at(depth))
}
