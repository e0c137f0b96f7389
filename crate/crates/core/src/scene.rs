//! Analytic scenes built from signed-distance primitives with procedural
//! colors, and an exact RGB-D ray caster used as ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{DepthImage, RgbImage};
use crate::geometry::{Intrinsics, Pose, Ray, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ColorFn {
    Constant {
        rgb: [f64; 3],
    },
    /// Linear blend from `from` at `start` to `to` at `end` along one axis.
    Gradient {
        axis: usize,
        start: f64,
        end: f64,
        from: [f64; 3],
        to: [f64; 3],
    },
    /// 3-D checkerboard of cubes with edge `period`, offset by a quarter
    /// period so axis-aligned faces at multiples of the period do not sit on
    /// a color boundary.
    Checker {
        period: f64,
        a: [f64; 3],
        b: [f64; 3],
    },
}

impl ColorFn {
    pub fn eval(&self, p: &Vec3) -> [f64; 3] {
        match self {
            ColorFn::Constant { rgb } => *rgb,
            ColorFn::Gradient {
                axis,
                start,
                end,
                from,
                to,
            } => {
                let s = ((p[*axis] - start) / (end - start)).clamp(0.0, 1.0);
                std::array::from_fn(|c| from[c] + s * (to[c] - from[c]))
            }
            ColorFn::Checker { period, a, b } => {
                let k: i64 = (0..3)
                    .map(|i| (p[i] / period + 0.25).floor() as i64)
                    .sum();
                if k.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ColorFn::Gradient { axis, start, end, .. } if *axis > 2 || start == end => {
                Err(Error::Config("gradient needs axis 0..=2 and start != end".into()))
            }
            ColorFn::Checker { period, .. } if !(*period > 0.0) => {
                Err(Error::Config("checker period must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        color: ColorFn,
    },
    /// Solid box rotated by `yaw_deg` about the vertical axis.
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        #[serde(default)]
        yaw_deg: f64,
        color: ColorFn,
    },
    /// Hollow room: solid everywhere outside the box, free inside.
    Room {
        center: [f64; 3],
        half_extents: [f64; 3],
        color: ColorFn,
    },
}

fn box_sdf(q: &Vec3, h: &[f64; 3]) -> f64 {
    let d = Vec3::new(q[0].abs() - h[0], q[1].abs() - h[1], q[2].abs() - h[2]);
    let outside = d.map(|v| v.max(0.0)).norm();
    let inside = d.max().min(0.0);
    outside + inside
}

impl Primitive {
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self {
            Primitive::Sphere { center, radius, .. } => (p - Vec3::from(*center)).norm() - radius,
            Primitive::Box {
                center,
                half_extents,
                yaw_deg,
                ..
            } => {
                let local = Pose::rot_z(-yaw_deg.to_radians()).transform_vector(&(p - Vec3::from(*center)));
                box_sdf(&local, half_extents)
            }
            Primitive::Room {
                center, half_extents, ..
            } => -box_sdf(&(p - Vec3::from(*center)), half_extents),
        }
    }

    pub fn color(&self, p: &Vec3) -> [f64; 3] {
        match self {
            Primitive::Sphere { color, .. }
            | Primitive::Box { color, .. }
            | Primitive::Room { color, .. } => color.eval(p),
        }
    }

    /// Bounding box of the primitive's surface.
    fn bounds(&self) -> (Vec3, Vec3) {
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let c = Vec3::from(*center);
                (c - Vec3::repeat(*radius), c + Vec3::repeat(*radius))
            }
            Primitive::Box {
                center, half_extents, ..
            } => {
                let r = Vec3::from(*half_extents).norm();
                let c = Vec3::from(*center);
                (c - Vec3::repeat(r), c + Vec3::repeat(r))
            }
            Primitive::Room {
                center, half_extents, ..
            } => {
                let c = Vec3::from(*center);
                let h = Vec3::from(*half_extents);
                (c - h, c + h)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let (ok, color) = match self {
            Primitive::Sphere { radius, color, .. } => (*radius > 0.0, color),
            Primitive::Box {
                half_extents, color, ..
            }
            | Primitive::Room {
                half_extents, color, ..
            } => (half_extents.iter().all(|&h| h > 0.0), color),
        };
        if !ok {
            return Err(Error::Config("primitive dimensions must be positive".into()));
        }
        color.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub background: [f64; 3],
    /// Standard deviation of Gaussian noise added to rendered depth (m).
    #[serde(default)]
    pub depth_noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::default_room()
    }
}

const SURFACE_EPS: f64 = 1e-10;
const MAX_STEPS: usize = 20_000;

impl SceneSpec {
    /// 6 × 6 × 3 m checker room with three interior objects.
    pub fn default_room() -> Self {
        Self {
            primitives: vec![
                Primitive::Room {
                    center: [0.0, 0.0, 1.5],
                    half_extents: [3.0, 3.0, 1.5],
                    color: ColorFn::Checker {
                        period: 0.5,
                        a: [0.78, 0.72, 0.62],
                        b: [0.52, 0.5, 0.46],
                    },
                },
                Primitive::Sphere {
                    center: [1.3, 1.2, 0.6],
                    radius: 0.5,
                    color: ColorFn::Gradient {
                        axis: 2,
                        start: 0.1,
                        end: 1.1,
                        from: [0.75, 0.3, 0.25],
                        to: [0.9, 0.7, 0.3],
                    },
                },
                Primitive::Box {
                    center: [-1.3, -1.1, 0.4],
                    half_extents: [0.45, 0.35, 0.4],
                    yaw_deg: 20.0,
                    color: ColorFn::Constant {
                        rgb: [0.3, 0.55, 0.4],
                    },
                },
                Primitive::Sphere {
                    center: [-1.2, 1.4, 1.6],
                    radius: 0.35,
                    color: ColorFn::Constant {
                        rgb: [0.35, 0.4, 0.7],
                    },
                },
            ],
            background: [0.0; 3],
            depth_noise: 0.0,
        }
    }

    /// A single unit sphere at the origin.
    pub fn unit_sphere() -> Self {
        Self {
            primitives: vec![Primitive::Sphere {
                center: [0.0; 3],
                radius: 1.0,
                color: ColorFn::Constant {
                    rgb: [0.8, 0.5, 0.3],
                },
            }],
            background: [0.0; 3],
            depth_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::Config("scene needs at least one primitive".into()));
        }
        if !(self.depth_noise >= 0.0) {
            return Err(Error::Config("depth_noise must be non-negative".into()));
        }
        self.primitives.iter().try_for_each(Primitive::validate)
    }

    /// Union distance and the color of the nearest primitive.
    pub fn sdf(&self, p: &Vec3) -> (f64, [f64; 3]) {
        let (i, d) = self.nearest(p);
        (d, self.primitives[i].color(p))
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.nearest(p).1
    }

    fn nearest(&self, p: &Vec3) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, prim) in self.primitives.iter().enumerate() {
            let d = prim.sdf(p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Box around every primitive surface.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.primitives {
            let (a, b) = p.bounds();
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        }
        (lo, hi)
    }

    /// First surface hit along the ray within `t_max`, by sphere tracing.
    pub fn raycast(&self, ray: &Ray, t_max: f64) -> Option<(f64, [f64; 3])> {
        let mut t = 0.0;
        let mut last = f64::INFINITY;
        for _ in 0..MAX_STEPS {
            let p = ray.at(t);
            let (i, d) = self.nearest(&p);
            if d.abs() < SURFACE_EPS {
                return Some((t, self.primitives[i].color(&p)));
            }
            if d < 0.0 {
                // Started inside a solid: report the origin as the hit.
                if t == 0.0 {
                    return Some((0.0, self.primitives[i].color(&p)));
                }
                t += d;
                continue;
            }
            t += d;
            last = d;
            if t > t_max {
                return None;
            }
        }
        if last < 1e-6 {
            let p = ray.at(t);
            let (i, _) = self.nearest(&p);
            return Some((t, self.primitives[i].color(&p)));
        }
        None
    }

    /// Ground-truth color and ray-length depth for a camera at `pose`.
    /// Missed pixels get the background color and depth 0.
    pub fn render_gt_frame(&self, pose: &Pose, intr: &Intrinsics, seed: u64) -> (RgbImage, DepthImage) {
        let (w, h) = (intr.width, intr.height);
        let t_max = {
            let (lo, hi) = self.bounds();
            (hi - lo).norm() + (pose.translation - 0.5 * (lo + hi)).norm()
        };
        let rows: Vec<Vec<([f64; 3], f64)>> = (0..h)
            .into_par_iter()
            .map(|v| {
                (0..w)
                    .map(|u| {
                        let ray = Ray {
                            origin: pose.translation,
                            direction: pose.rotation * intr.camera_direction(u, v),
                            pixel: (u, v),
                        };
                        match self.raycast(&ray, t_max) {
                            Some((d, c)) => (c, d),
                            None => (self.background, 0.0),
                        }
                    })
                    .collect()
            })
            .collect();
        let mut color = RgbImage::filled(w, h, self.background);
        let mut depth = DepthImage::filled(w, h, 0.0);
        for (v, row) in rows.into_iter().enumerate() {
            for (u, (c, d)) in row.into_iter().enumerate() {
                color.set(u as u32, v as u32, c);
                depth.set(u as u32, v as u32, d);
            }
        }
        if self.depth_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, self.depth_noise).expect("validated noise level");
            for d in depth.data.iter_mut().filter(|d| **d > 0.0) {
                *d = (*d + noise.sample(&mut rng)).max(1e-3);
            }
        }
        (color, depth)
    }
}
