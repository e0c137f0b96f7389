//! Simulated camera tracking: ground-truth trajectories from waypoints,
//! odometric drift, keyframe selection, proximity loop detection, and a
//! Gauss-Newton pose graph that stands in for global bundle adjustment.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{se3_exp, se3_log, Mat3, Pose, Twist, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub position: [f64; 3],
    /// Heading about world +z, degrees; 0 looks along +x.
    pub yaw_deg: f64,
    /// Elevation of the viewing direction, degrees; negative looks down.
    #[serde(default)]
    pub pitch_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub waypoints: Vec<Waypoint>,
    /// Close the path by returning to the first waypoint after the last.
    pub closed: bool,
    /// Number of passes over the path.
    pub laps: f64,
    /// Linear speed (m/s).
    pub speed: f64,
    /// Turning speed (deg/s).
    pub turn_rate_deg: f64,
    pub frame_rate: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self::square(1.0, 1.4, -20.0, 2.0)
    }
}

impl TrajectoryConfig {
    /// Square of half-side `half` at height `z`, walked counter-clockwise
    /// with the camera facing the direction of travel and turning in place
    /// at the corners.
    pub fn square(half: f64, z: f64, pitch_deg: f64, laps: f64) -> Self {
        let corners = [(-half, -half), (half, -half), (half, half), (-half, half)];
        let mut waypoints = Vec::new();
        for (i, &(x, y)) in corners.iter().enumerate() {
            let yaw_in = 90.0 * i as f64 - 90.0;
            let yaw_out = 90.0 * i as f64;
            waypoints.push(Waypoint {
                position: [x, y, z],
                yaw_deg: yaw_in,
                pitch_deg,
            });
            waypoints.push(Waypoint {
                position: [x, y, z],
                yaw_deg: yaw_out,
                pitch_deg,
            });
        }
        // the first corner is entered heading −90°; start already turned
        waypoints.remove(0);
        for yaw_deg in [270.0, 360.0] {
            waypoints.push(Waypoint {
                position: [-half, -half, z],
                yaw_deg,
                pitch_deg,
            });
        }
        Self {
            waypoints,
            closed: false,
            laps,
            speed: 0.5,
            turn_rate_deg: 45.0,
            frame_rate: 10.0,
        }
    }

    /// Straight segment with a fixed heading.
    pub fn line(from: [f64; 3], to: [f64; 3], yaw_deg: f64) -> Self {
        Self {
            waypoints: vec![
                Waypoint {
                    position: from,
                    yaw_deg,
                    pitch_deg: 0.0,
                },
                Waypoint {
                    position: to,
                    yaw_deg,
                    pitch_deg: 0.0,
                },
            ],
            closed: false,
            laps: 1.0,
            speed: 0.5,
            turn_rate_deg: 45.0,
            frame_rate: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::Config("trajectory needs at least two waypoints".into()));
        }
        if !(self.laps > 0.0 && self.speed > 0.0 && self.turn_rate_deg > 0.0 && self.frame_rate > 0.0) {
            return Err(Error::Config("laps, speed, turn rate and frame rate must be positive".into()));
        }
        Ok(())
    }
}

/// Camera orientation (world ← camera) for a heading and elevation.
/// Columns are the camera's right, down and forward axes.
pub fn look_rotation(yaw: f64, pitch: f64) -> Mat3 {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let forward = Vec3::new(cy * cp, sy * cp, sp);
    let right = Vec3::new(sy, -cy, 0.0);
    let down = forward.cross(&right);
    Mat3::from_columns(&[right, down, forward])
}

/// Ground-truth poses sampled at the frame rate.
pub fn generate_ground_truth(cfg: &TrajectoryConfig) -> Result<Vec<Pose>> {
    cfg.validate()?;
    let mut pts = cfg.waypoints.clone();
    if cfg.closed {
        pts.push(pts[0]);
    }
    // per-segment durations in seconds
    let durations: Vec<f64> = pts
        .windows(2)
        .map(|w| {
            let len = (Vec3::from(w[1].position) - Vec3::from(w[0].position)).norm();
            let turn = (w[1].yaw_deg - w[0].yaw_deg)
                .abs()
                .max((w[1].pitch_deg - w[0].pitch_deg).abs());
            (len / cfg.speed).max(turn / cfg.turn_rate_deg)
        })
        .collect();
    let lap: f64 = durations.iter().sum();
    if !(lap > 0.0) {
        return Err(Error::Config("trajectory has zero length".into()));
    }
    let total = lap * cfg.laps;
    let n = (total * cfg.frame_rate).floor() as usize + 1;
    let mut poses = Vec::with_capacity(n);
    for k in 0..n {
        let mut t = (k as f64 / cfg.frame_rate) % lap;
        if k as f64 / cfg.frame_rate >= total {
            t = lap;
        }
        let mut seg = 0;
        while seg + 1 < durations.len() && t > durations[seg] {
            t -= durations[seg];
            seg += 1;
        }
        let s = if durations[seg] > 0.0 {
            (t / durations[seg]).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let (a, b) = (&pts[seg], &pts[seg + 1]);
        let pos = Vec3::from(a.position) * (1.0 - s) + Vec3::from(b.position) * s;
        let yaw = a.yaw_deg + s * (b.yaw_deg - a.yaw_deg);
        let pitch = a.pitch_deg + s * (b.pitch_deg - a.pitch_deg);
        poses.push(Pose::new(look_rotation(yaw.to_radians(), pitch.to_radians()), pos));
    }
    Ok(poses)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    /// Per-frame translation noise (m, per axis).
    pub sigma_t: f64,
    /// Per-frame rotation noise (rad, per axis).
    pub sigma_r: f64,
    /// Per-frame translation bias in the camera frame (m).
    pub bias_translation: [f64; 3],
    /// Per-frame rotation bias about world-vertical, i.e. heading drift (deg).
    pub bias_yaw_deg: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            sigma_t: 2e-3,
            sigma_r: 2e-4,
            bias_translation: [0.0; 3],
            bias_yaw_deg: 0.05,
        }
    }
}

impl DriftConfig {
    pub fn none() -> Self {
        Self {
            sigma_t: 0.0,
            sigma_r: 0.0,
            bias_translation: [0.0; 3],
            bias_yaw_deg: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_t >= 0.0 && self.sigma_r >= 0.0) {
            return Err(Error::Config("drift noise must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimFrame {
    pub id: usize,
    pub timestamp: f64,
    pub gt: Pose,
    pub estimate: Pose,
}

/// Replays a ground-truth trajectory and integrates drifted odometry.
#[derive(Clone, Debug)]
pub struct TrajectoryModel {
    gt: Vec<Pose>,
    drift: DriftConfig,
    frame_rate: f64,
    next: usize,
    estimate: Pose,
    rng: ChaCha8Rng,
}

impl TrajectoryModel {
    pub fn new(cfg: &TrajectoryConfig, drift: &DriftConfig, seed: u64) -> Result<Self> {
        drift.validate()?;
        Ok(Self::from_poses(generate_ground_truth(cfg)?, drift.clone(), cfg.frame_rate, seed))
    }

    pub fn from_poses(gt: Vec<Pose>, drift: DriftConfig, frame_rate: f64, seed: u64) -> Self {
        Self {
            gt,
            drift,
            frame_rate,
            next: 0,
            estimate: Pose::identity(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.gt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt.is_empty()
    }

    pub fn ground_truth(&self) -> &[Pose] {
        &self.gt
    }

    /// Replaces the running estimate, e.g. after relocalizing against a
    /// corrected map.
    pub fn relocalize(&mut self, estimate: Pose) {
        self.estimate = estimate;
    }

    fn increment_error(&mut self) -> Pose {
        let d = &self.drift;
        let mut xi = Twist::zeros();
        if d.sigma_t > 0.0 {
            let n = Normal::new(0.0, d.sigma_t).expect("validated");
            for i in 0..3 {
                xi[i] = n.sample(&mut self.rng);
            }
        }
        if d.sigma_r > 0.0 {
            let n = Normal::new(0.0, d.sigma_r).expect("validated");
            for i in 3..6 {
                xi[i] = n.sample(&mut self.rng);
            }
        }
        let noise = se3_exp(&xi);
        let bias_t = Pose::from_translation(Vec3::from(d.bias_translation));
        noise.compose(&bias_t)
    }

    pub fn next_frame(&mut self) -> Result<SimFrame> {
        let k = self.next;
        if k >= self.gt.len() {
            return Err(Error::TrajectoryExhausted(self.gt.len()));
        }
        let gt = self.gt[k];
        self.estimate = if k == 0 {
            gt
        } else {
            let prev = self.gt[k - 1];
            let delta = Pose::between(&prev, &gt);
            let err = self.increment_error();
            let moved = self.estimate.compose(&delta.compose(&err));
            // heading drift rotates the estimate about the world vertical
            // through the current position
            let yaw = Pose::rot_z(self.drift.bias_yaw_deg.to_radians());
            Pose::new(yaw.rotation * moved.rotation, moved.translation)
        };
        self.next += 1;
        Ok(SimFrame {
            id: k,
            timestamp: k as f64 / self.frame_rate,
            gt,
            estimate: self.estimate,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyframePolicy {
    /// Translation threshold (m).
    pub delta_t: f64,
    /// Rotation threshold (deg).
    pub delta_r_deg: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            delta_t: 0.2,
            delta_r_deg: 10.0,
        }
    }
}

/// True for the first frame and whenever the camera moved more than either
/// threshold since the previous keyframe.
pub fn is_keyframe(prev: Option<&Pose>, current: &Pose, policy: &KeyframePolicy) -> bool {
    match prev {
        None => true,
        Some(p) => {
            let rel = Pose::between(p, current);
            rel.translation.norm() > policy.delta_t || rel.rotation_angle() > policy.delta_r_deg.to_radians()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopPolicy {
    pub radius: f64,
    pub angle_deg: f64,
    /// Most recent keyframes excluded from matching.
    pub window: usize,
}

impl Default for LoopPolicy {
    fn default() -> Self {
        Self {
            radius: 0.5,
            angle_deg: 20.0,
            window: 20,
        }
    }
}

/// Oldest keyframe (by position in `history`) within the loop radius and
/// angle of `current`, ignoring the last `window` entries. Poses are ground
/// truth, so this acts as a perfect place recognizer.
pub fn detect_loop(current: &Pose, history: &[(u64, Pose)], policy: &LoopPolicy) -> Option<u64> {
    let eligible = history.len().checked_sub(policy.window)?;
    history[..eligible].iter().find_map(|(id, pose)| {
        let rel = Pose::between(pose, current);
        (rel.translation.norm() <= policy.radius && rel.rotation_angle() <= policy.angle_deg.to_radians())
            .then_some(*id)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    Odometry,
    Loop,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub from: u64,
    pub to: u64,
    /// Measured `from⁻¹ ∘ to`.
    pub measurement: Pose,
    pub information: f64,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, Default)]
pub struct PoseGraph {
    pub nodes: BTreeMap<u64, Pose>,
    pub edges: Vec<Edge>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
}

impl PoseGraph {
    pub fn add_node(&mut self, id: u64, pose: Pose) {
        self.nodes.insert(id, pose);
    }

    pub fn add_edge(&mut self, from: u64, to: u64, measurement: Pose, information: f64, kind: EdgeKind) {
        self.edges.push(Edge {
            from,
            to,
            measurement,
            information,
            kind,
        });
    }

    fn residual(meas: &Pose, a: &Pose, b: &Pose) -> Result<Twist> {
        se3_log(&meas.inverse().compose(&Pose::between(a, b)))
    }

    /// Weighted sum of squared residual norms.
    pub fn cost(&self) -> Result<f64> {
        let mut c = 0.0;
        for e in &self.edges {
            let a = self.nodes.get(&e.from).ok_or(Error::UnknownNode(e.from))?;
            let b = self.nodes.get(&e.to).ok_or(Error::UnknownNode(e.to))?;
            c += e.information * Self::residual(&e.measurement, a, b)?.norm_squared();
        }
        Ok(c)
    }

    fn check_connected(&self) -> Result<()> {
        let ids: Vec<u64> = self.nodes.keys().copied().collect();
        let index: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn root(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for e in &self.edges {
            let a = *index.get(&e.from).ok_or(Error::UnknownNode(e.from))?;
            let b = *index.get(&e.to).ok_or(Error::UnknownNode(e.to))?;
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            parent[ra] = rb;
        }
        let r0 = root(&mut parent, 0);
        if (0..ids.len()).any(|i| root(&mut parent, i) != r0) {
            return Err(Error::DisconnectedGraph);
        }
        Ok(())
    }

    /// Gauss-Newton with right-perturbation updates `T ← T ∘ exp(δ)` and
    /// central-difference Jacobians. The first node is held fixed. A step that
    /// raises the cost is rejected and retried with Levenberg damping.
    pub fn optimize(&mut self, max_iterations: usize) -> Result<OptimizeReport> {
        if self.nodes.is_empty() {
            return Err(Error::DisconnectedGraph);
        }
        self.check_connected()?;
        let ids: Vec<u64> = self.nodes.keys().copied().collect();
        let index: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let n = ids.len() - 1;
        let initial = self.cost()?;
        let mut cost = initial;
        let mut lambda = 0.0;
        let mut iterations = 0;
        if n == 0 {
            return Ok(OptimizeReport {
                iterations,
                initial_cost: initial,
                final_cost: cost,
            });
        }
        while iterations < max_iterations && cost > 1e-24 {
            iterations += 1;
            let (h, b) = self.linearize(&index)?;
            let mut accepted = false;
            for _ in 0..12 {
                let mut hd = h.clone();
                if lambda > 0.0 {
                    for i in 0..6 * n {
                        hd[(i, i)] += lambda * h[(i, i)].max(1e-12);
                    }
                }
                let Some(chol) = hd.cholesky() else {
                    lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
                    continue;
                };
                let delta = chol.solve(&(-&b));
                let mut trial = self.clone();
                for (k, id) in ids.iter().skip(1).enumerate() {
                    let xi = Twist::from_fn(|r, _| delta[6 * k + r]);
                    let pose = trial.nodes.get_mut(id).expect("node listed");
                    *pose = pose.compose(&se3_exp(&xi));
                }
                let new_cost = trial.cost()?;
                if new_cost <= cost {
                    let decrease = cost - new_cost;
                    *self = trial;
                    cost = new_cost;
                    lambda *= 0.1;
                    if lambda < 1e-12 {
                        lambda = 0.0;
                    }
                    accepted = true;
                    if decrease < 1e-9 * cost.max(1e-9) {
                        return Ok(OptimizeReport {
                            iterations,
                            initial_cost: initial,
                            final_cost: cost,
                        });
                    }
                    break;
                }
                lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
            }
            if !accepted {
                if cost > 1e-12 && iterations == 1 {
                    return Err(Error::SingularSystem);
                }
                break;
            }
        }
        Ok(OptimizeReport {
            iterations,
            initial_cost: initial,
            final_cost: cost,
        })
    }

    fn linearize(&self, index: &BTreeMap<u64, usize>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = index.len() - 1;
        let mut h = DMatrix::<f64>::zeros(6 * n, 6 * n);
        let mut b = DVector::<f64>::zeros(6 * n);
        let step = 1e-6;
        for e in &self.edges {
            let pa = self.nodes[&e.from];
            let pb = self.nodes[&e.to];
            let r = Self::residual(&e.measurement, &pa, &pb)?;
            let mut blocks: Vec<(usize, nalgebra::Matrix6<f64>)> = Vec::with_capacity(2);
            for (node, is_a) in [(e.from, true), (e.to, false)] {
                let slot = index[&node];
                if slot == 0 {
                    continue;
                }
                let mut j = nalgebra::Matrix6::<f64>::zeros();
                for c in 0..6 {
                    let mut xi = Twist::zeros();
                    xi[c] = step;
                    let plus = se3_exp(&xi);
                    xi[c] = -step;
                    let minus = se3_exp(&xi);
                    let (rp, rm) = if is_a {
                        (
                            Self::residual(&e.measurement, &pa.compose(&plus), &pb)?,
                            Self::residual(&e.measurement, &pa.compose(&minus), &pb)?,
                        )
                    } else {
                        (
                            Self::residual(&e.measurement, &pa, &pb.compose(&plus))?,
                            Self::residual(&e.measurement, &pa, &pb.compose(&minus))?,
                        )
                    };
                    j.set_column(c, &((rp - rm) / (2.0 * step)));
                }
                blocks.push((slot - 1, j));
            }
            for (i, ji) in &blocks {
                let g = ji.transpose() * r * e.information;
                for k in 0..6 {
                    b[6 * i + k] += g[k];
                }
                for (j, jj) in &blocks {
                    let blk = ji.transpose() * jj * e.information;
                    for r_ in 0..6 {
                        for c in 0..6 {
                            h[(6 * i + r_, 6 * j + c)] += blk[(r_, c)];
                        }
                    }
                }
            }
        }
        Ok((h, b))
    }
}
