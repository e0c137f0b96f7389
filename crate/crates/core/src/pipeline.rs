//! The mapping loop: simulated tracking feeds keyframes to local mapping,
//! and a detected loop triggers pose-graph correction, rigid submap
//! adjustment and fine-tuning.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::frame::KeyframePacket;
use crate::geometry::{Pose, Vec3};
use crate::metrics::{ate_rmse, depth_l1_valid, psnr, ssim, uncertainty_correlation, ViewRecord};
use crate::submaps::{AssignmentKind, SubmapAtlas};
use crate::tracking::{detect_loop, is_keyframe, EdgeKind, LoopPolicy, PoseGraph, TrajectoryModel};

/// Per-keyframe mapping latency. Loop keyframes also carry the time of the
/// pose-graph solve, stage one (anchor adjustment) and stage two
/// (fine-tuning), each measured separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub keyframe: u64,
    pub submap: u64,
    pub assignment: AssignmentKind,
    pub integrate_ms: f64,
    pub train_ms: f64,
    pub pose_graph_ms: Option<f64>,
    pub stage_one_ms: Option<f64>,
    pub finetune_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopEvent {
    pub keyframe: u64,
    pub matched: u64,
    pub anchors_moved: usize,
    pub finetuned: Vec<u64>,
    pub ate_before_cm: f64,
    pub ate_after_cm: f64,
    pub submaps: usize,
    pub nodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    /// The frame was not a keyframe.
    Tracked,
    Keyframe { id: u64, submap: u64 },
    /// The keyframe was integrated and closes a loop with `matched`; call
    /// the loop-closing stages before the next step.
    LoopDetected { id: u64, matched: u64 },
    Finished,
}

/// Result of the pose-graph stage of loop closing.
#[derive(Clone, Debug)]
pub struct CorrectedPoses {
    pub poses: BTreeMap<u64, Pose>,
    pub elapsed_ms: f64,
}

pub struct Session {
    pub config: RunConfig,
    pub atlas: SubmapAtlas,
    tracker: TrajectoryModel,
    /// Ground-truth pose of every keyframe.
    pub gt: BTreeMap<u64, Pose>,
    order: Vec<u64>,
    /// Keyframes whose poses are consistent with a completed loop closure.
    closed: BTreeSet<u64>,
    /// Odometry and loop edges gathered so far, as (from, to, measurement).
    odometry: Vec<(u64, u64, Pose)>,
    loop_edges: Vec<(u64, u64, Pose)>,
    pending: Option<(u64, u64)>,
    last_keyframe: Option<Pose>,
    rng: ChaCha8Rng,
    pub latency: Vec<LatencyRecord>,
    pub loops: Vec<LoopEvent>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl Session {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let tracker = TrajectoryModel::new(&config.trajectory, &config.drift, config.seed)?;
        let atlas = SubmapAtlas::new(config.mapping.clone(), config.seed)?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6d61_7070);
        Ok(Self {
            config,
            atlas,
            tracker,
            gt: BTreeMap::new(),
            order: Vec::new(),
            closed: BTreeSet::new(),
            odometry: Vec::new(),
            loop_edges: Vec::new(),
            pending: None,
            last_keyframe: None,
            rng,
            latency: Vec::new(),
            loops: Vec::new(),
        })
    }

    pub fn keyframe_ids(&self) -> &[u64] {
        &self.order
    }

    pub fn frame_count(&self) -> usize {
        self.tracker.len()
    }

    /// Closed keyframe nearest to `gt` within the loop thresholds.
    fn nearest_closed(&self, gt: &Pose) -> Option<u64> {
        let p = &self.config.loop_policy;
        self.closed
            .iter()
            .filter_map(|id| {
                let rel = Pose::between(&self.gt[id], gt);
                let d = rel.translation.norm();
                (d <= p.radius && rel.rotation_angle() <= p.angle_deg.to_radians()).then_some((d, *id))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
    }

    fn loop_candidate(&self, gt: &Pose) -> Option<u64> {
        let p = self.config.loop_policy;
        let eligible = self.order.len().checked_sub(p.window)?;
        let history: Vec<(u64, Pose)> = self.order[..eligible]
            .iter()
            .filter(|id| !self.closed.contains(id))
            .map(|id| (*id, self.gt[id]))
            .collect();
        detect_loop(gt, &history, &LoopPolicy { window: 0, ..p })
    }

    /// Advances the tracker by one frame and maps it if it is a keyframe.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if let Some((id, matched)) = self.pending {
            return Ok(StepOutcome::LoopDetected { id, matched });
        }
        let frame = match self.tracker.next_frame() {
            Ok(f) => f,
            Err(Error::TrajectoryExhausted(_)) => return Ok(StepOutcome::Finished),
            Err(e) => return Err(e),
        };
        if !is_keyframe(self.last_keyframe.as_ref(), &frame.estimate, &self.config.keyframes) {
            return Ok(StepOutcome::Tracked);
        }
        let id = frame.id as u64;
        self.map_keyframe(id, frame.timestamp, frame.gt, frame.estimate)
            .map_err(|e| Error::at_keyframe(id, e))
    }

    fn map_keyframe(&mut self, id: u64, timestamp: f64, gt: Pose, raw: Pose) -> Result<StepOutcome> {
        let mut estimate = raw;
        let mut matched = None;
        let relocalized = self.nearest_closed(&gt);
        if let Some(m) = relocalized {
            // revisiting corrected territory: the tracker re-anchors on the
            // matched keyframe instead of reporting a new loop
            estimate = self.atlas.poses[&m].compose(&Pose::between(&self.gt[&m], &gt));
            self.tracker.relocalize(estimate);
        } else {
            matched = self.loop_candidate(&gt);
        }
        if let Some(&prev) = self.order.last() {
            let meas = Pose::between(&self.atlas.poses[&prev], &raw);
            self.odometry.push((prev, id, meas));
        }
        if let Some(m) = relocalized {
            self.loop_edges.push((m, id, Pose::between(&self.gt[&m], &gt)));
            self.closed.insert(id);
        }
        let cam = self.config.camera;
        let (color, depth) = self.config.scene.render_gt_frame(&gt, &cam, self.config.seed ^ id);
        let packet = KeyframePacket {
            id,
            timestamp,
            intrinsics: cam,
            pose: estimate,
            color,
            depth,
        };
        let t0 = Instant::now();
        let assignment = self.atlas.select_local_map(&packet)?;
        self.atlas.integrate(packet, &assignment)?;
        let integrate_ms = ms(t0);
        let t1 = Instant::now();
        let iterations = self.config.mapping.iterations;
        self.atlas.train_keyframe(id, iterations, &mut self.rng)?;
        let train_ms = ms(t1);
        self.gt.insert(id, gt);
        self.order.push(id);
        self.last_keyframe = Some(estimate);
        self.latency.push(LatencyRecord {
            keyframe: id,
            submap: assignment.submap,
            assignment: assignment.kind,
            integrate_ms,
            train_ms,
            pose_graph_ms: None,
            stage_one_ms: None,
            finetune_ms: None,
        });
        log::debug!(
            "keyframe {id}: submap {} ({:?}, coverage {:.3})",
            assignment.submap,
            assignment.kind,
            assignment.coverage
        );
        if let Some(m) = matched {
            self.pending = Some((id, m));
            return Ok(StepOutcome::LoopDetected { id, matched: m });
        }
        Ok(StepOutcome::Keyframe {
            id,
            submap: assignment.submap,
        })
    }

    pub fn pending_loop(&self) -> Option<(u64, u64)> {
        self.pending
    }

    /// Pose-graph solve for the pending loop; the atlas is not modified.
    pub fn correct_poses(&self) -> Result<CorrectedPoses> {
        let (id, matched) = self.pending.ok_or(Error::Config("no pending loop".into()))?;
        let t = Instant::now();
        let mut graph = PoseGraph::default();
        for kf in &self.order {
            graph.add_node(*kf, self.atlas.poses[kf]);
        }
        for (a, b, m) in &self.odometry {
            graph.add_edge(*a, *b, *m, 1.0, EdgeKind::Odometry);
        }
        let w = self.config.loop_information;
        for (a, b, m) in &self.loop_edges {
            graph.add_edge(*a, *b, *m, w, EdgeKind::Loop);
        }
        graph.add_edge(
            matched,
            id,
            Pose::between(&self.gt[&matched], &self.gt[&id]),
            w,
            EdgeKind::Loop,
        );
        graph.optimize(100)?;
        Ok(CorrectedPoses {
            poses: graph.nodes,
            elapsed_ms: ms(t),
        })
    }

    /// Stage one: rigid anchor adjustment. Returns anchors moved and time.
    pub fn stage_one(&mut self, corrected: &CorrectedPoses) -> Result<(usize, f64)> {
        let t = Instant::now();
        let moved = self.atlas.adjust_submaps(&corrected.poses)?;
        Ok((moved, ms(t)))
    }

    /// Stage two: fine-tunes submaps whose members moved. Returns the
    /// fine-tuned ids and time.
    pub fn stage_two(&mut self) -> Result<(Vec<u64>, f64)> {
        let t = Instant::now();
        let budget = self.config.mapping.finetune_budget;
        let reports = self.atlas.finetune_submaps(budget, &mut self.rng)?;
        Ok((reports.into_iter().map(|r| r.0).collect(), ms(t)))
    }

    /// Marks the pending loop as closed and re-anchors the tracker.
    pub fn finish_loop(&mut self, corrected: &CorrectedPoses) -> Result<()> {
        let (id, matched) = self.pending.take().ok_or(Error::Config("no pending loop".into()))?;
        self.loop_edges
            .push((matched, id, Pose::between(&self.gt[&matched], &self.gt[&id])));
        self.closed.extend(self.order.iter().copied());
        let pose = corrected.poses[&id];
        self.tracker.relocalize(pose);
        self.last_keyframe = Some(pose);
        Ok(())
    }

    /// Runs every loop-closing stage for the pending loop and logs it.
    pub fn close_loop(&mut self) -> Result<LoopEvent> {
        let (id, matched) = self.pending.ok_or(Error::Config("no pending loop".into()))?;
        let ate_before_cm = self.keyframe_ate()?;
        let corrected = self.correct_poses()?;
        let (anchors_moved, stage_one_ms) = self.stage_one(&corrected)?;
        let (finetuned, finetune_ms) = self.stage_two()?;
        self.finish_loop(&corrected)?;
        if let Some(rec) = self.latency.iter_mut().rev().find(|r| r.keyframe == id) {
            rec.pose_graph_ms = Some(corrected.elapsed_ms);
            rec.stage_one_ms = Some(stage_one_ms);
            rec.finetune_ms = Some(finetune_ms);
        }
        let event = LoopEvent {
            keyframe: id,
            matched,
            anchors_moved,
            finetuned,
            ate_before_cm,
            ate_after_cm: self.keyframe_ate()?,
            submaps: self.atlas.submaps.len(),
            nodes: self.atlas.node_count(),
        };
        log::info!(
            "loop {id} -> {matched}: ATE {:.2} -> {:.2} cm, {} anchors moved, {} submaps fine-tuned",
            event.ate_before_cm,
            event.ate_after_cm,
            event.anchors_moved,
            event.finetuned.len()
        );
        self.loops.push(event.clone());
        Ok(event)
    }

    /// Runs to the end of the trajectory, closing every detected loop.
    pub fn run(&mut self) -> Result<()> {
        loop {
            match self.step()? {
                StepOutcome::Finished => return Ok(()),
                StepOutcome::LoopDetected { id, .. } => {
                    self.close_loop().map_err(|e| Error::at_keyframe(id, e))?;
                }
                _ => {}
            }
        }
    }

    /// Runs until `n` keyframes exist or a loop is pending.
    pub fn run_keyframes(&mut self, n: usize) -> Result<StepOutcome> {
        loop {
            let out = self.step()?;
            match out {
                StepOutcome::Finished | StepOutcome::LoopDetected { .. } => return Ok(out),
                StepOutcome::Keyframe { .. } if self.order.len() >= n => return Ok(out),
                _ => {}
            }
        }
    }

    pub fn keyframe_trajectories(&self) -> (Vec<Pose>, Vec<Pose>) {
        self.order
            .iter()
            .map(|id| (self.atlas.poses[id], self.gt[id]))
            .unzip()
    }

    pub fn keyframe_ate(&self) -> Result<f64> {
        let (est, gt) = self.keyframe_trajectories();
        if est.len() < 3 {
            return Ok(0.0);
        }
        ate_rmse(&est, &gt)
    }
}

/// Held-out evaluation poses: random keyframe poses jittered in position and
/// heading.
pub fn sample_eval_poses(keyframes: &[Pose], n: usize, cfg: &crate::config::EvalConfig, seed: u64) -> Vec<Pose> {
    if keyframes.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6576_616c);
    (0..n)
        .map(|_| {
            let base = keyframes[rng.random_range(0..keyframes.len())];
            let j = cfg.jitter_position;
            let dp = if j > 0.0 {
                Vec3::new(rng.random_range(-j..=j), rng.random_range(-j..=j), rng.random_range(-j..=j))
            } else {
                Vec3::zeros()
            };
            let a = cfg.jitter_yaw_deg.to_radians();
            let yaw = if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
            let rz = Pose::rot_z(yaw).rotation;
            Pose::new(rz * base.rotation, base.translation + dp)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub depth_l1_cm: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub mean_uncertainty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub views: usize,
    pub depth_l1_cm: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub mean_uncertainty: f64,
    pub ate_cm: Option<f64>,
    pub rho_uncertainty_depth: Option<f64>,
    pub rho_uncertainty_psnr: Option<f64>,
}

/// Renders the fused map at `poses` (world frame) and scores each view
/// against the scene oracle.
pub fn evaluate_views(atlas: &SubmapAtlas, config: &RunConfig, poses: &[Pose]) -> Result<Vec<ViewMetrics>> {
    poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let view = atlas.render_fused(pose, &config.camera)?;
            let (color, depth) = config.scene.render_gt_frame(pose, &config.camera, 0);
            Ok(ViewMetrics {
                view: i,
                depth_l1_cm: depth_l1_valid(&view.depth, &depth)?,
                psnr_db: psnr(&view.color, &color)?,
                ssim: ssim(&view.color, &color)?,
                mean_uncertainty: view.mean_uncertainty(),
            })
        })
        .collect()
}

pub fn summarize(views: &[ViewMetrics], ate_cm: Option<f64>) -> EvalSummary {
    let n = views.len().max(1) as f64;
    let mean = |f: fn(&ViewMetrics) -> f64| views.iter().map(f).sum::<f64>() / n;
    let records: Vec<ViewRecord> = views
        .iter()
        .map(|v| ViewRecord {
            mean_uncertainty: v.mean_uncertainty,
            depth_l1_cm: v.depth_l1_cm,
            psnr_db: v.psnr_db,
        })
        .collect();
    let corr = uncertainty_correlation(&records).ok();
    EvalSummary {
        views: views.len(),
        depth_l1_cm: mean(|v| v.depth_l1_cm),
        psnr_db: mean(|v| v.psnr_db),
        ssim: mean(|v| v.ssim),
        mean_uncertainty: mean(|v| v.mean_uncertainty),
        ate_cm,
        rho_uncertainty_depth: corr.as_ref().map(|c| c.depth_l1),
        rho_uncertainty_psnr: corr.as_ref().map(|c| c.psnr),
    }
}
