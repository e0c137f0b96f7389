//! The five command entry points shared by the CLI and the test suites.
//! Each reads its inputs, does the work through the library and writes
//! files under an output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{hex, RunConfig};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::io::{
    encode_pgm16, encode_ppm, encode_uncertainty, format_trajectory, json_lines, parse_trajectory, write_file,
    DEPTH_SCALE,
};
use crate::mesh::{extract_mesh, to_ply};
use crate::metrics::ate_rmse;
use crate::pipeline::{evaluate_views, sample_eval_poses, summarize, EvalSummary, LoopEvent, Session};
use crate::tracking::TrajectoryModel;

pub const CHECKPOINT_FILE: &str = "checkpoint.nimap";
pub const METRICS_FILE: &str = "metrics.json";
pub const LATENCY_FILE: &str = "latency.jsonl";
pub const LOOPS_FILE: &str = "loops.jsonl";
pub const GT_TRAJECTORY_FILE: &str = "trajectory_gt.txt";
pub const EST_TRAJECTORY_FILE: &str = "trajectory_est.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub frames: usize,
}

/// Writes every ground-truth RGB-D frame plus the ground-truth and drifted
/// trajectories. The estimate is raw odometry, never relocalized.
pub fn cmd_simulate(config: &RunConfig, out: &Path) -> Result<SimulateReport> {
    config.validate()?;
    let mut tracker = TrajectoryModel::new(&config.trajectory, &config.drift, config.seed)?;
    let mut gt = Vec::with_capacity(tracker.len());
    let mut est = Vec::with_capacity(tracker.len());
    let frames = out.join("frames");
    while let Ok(f) = tracker.next_frame() {
        let (color, depth) = config.scene.render_gt_frame(&f.gt, &config.camera, config.seed ^ f.id as u64);
        write_file(&frames.join(format!("color_{:06}.ppm", f.id)), &encode_ppm(&color))?;
        write_file(&frames.join(format!("depth_{:06}.pgm", f.id)), &encode_pgm16(&depth, DEPTH_SCALE))?;
        gt.push((f.timestamp, f.gt));
        est.push((f.timestamp, f.estimate));
    }
    write_file(&out.join(GT_TRAJECTORY_FILE), format_trajectory(&gt).as_bytes())?;
    write_file(&out.join(EST_TRAJECTORY_FILE), format_trajectory(&est).as_bytes())?;
    Ok(SimulateReport { frames: gt.len() })
}

/// End-of-run metrics. Only deterministic quantities go here; timings live
/// in the latency log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub config_hash: String,
    pub scene_hash: String,
    pub keyframes: usize,
    pub submaps: usize,
    pub nodes: usize,
    pub loop_events: usize,
    pub eval: EvalSummary,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub metrics: RunMetrics,
    pub loops: Vec<LoopEvent>,
    pub wall_seconds: f64,
    pub checkpoint: PathBuf,
}

/// Evaluation of an atlas at poses sampled around ground-truth keyframes.
fn evaluate(config: &RunConfig, ck: &Checkpoint) -> Result<EvalSummary> {
    let ids: Vec<u64> = ck.ground_truth.keys().copied().collect();
    let gt: Vec<Pose> = ids.iter().map(|i| ck.ground_truth[i]).collect();
    let ate = if ids.len() >= 3 {
        let est = ids
            .iter()
            .map(|i| ck.atlas.poses.get(i).copied().ok_or(Error::UnknownKeyframe(*i)))
            .collect::<Result<Vec<_>>>()?;
        Some(ate_rmse(&est, &gt)?)
    } else {
        None
    };
    let poses = sample_eval_poses(&gt, config.eval.views, &config.eval, config.seed);
    let views = evaluate_views(&ck.atlas, config, &poses)?;
    Ok(summarize(&views, ate))
}

/// Runs the full mapping loop and writes the checkpoint, logs and metrics.
pub fn cmd_run(config: &RunConfig, out: &Path) -> Result<RunReport> {
    let t = Instant::now();
    let mut session = Session::new(config.clone())?;
    session.run()?;
    let wall_seconds = t.elapsed().as_secs_f64();
    let path = out.join(CHECKPOINT_FILE);
    checkpoint::save(&path, config, &session.atlas, &session.gt)?;
    write_file(&out.join(LATENCY_FILE), json_lines(&session.latency).as_bytes())?;
    write_file(&out.join(LOOPS_FILE), json_lines(&session.loops).as_bytes())?;
    let ids = session.keyframe_ids().to_vec();
    let stamp = |i: &u64| *i as f64 / config.trajectory.frame_rate;
    let gt: Vec<_> = ids.iter().map(|i| (stamp(i), session.gt[i])).collect();
    let est: Vec<_> = ids.iter().map(|i| (stamp(i), session.atlas.poses[i])).collect();
    write_file(&out.join(GT_TRAJECTORY_FILE), format_trajectory(&gt).as_bytes())?;
    write_file(&out.join(EST_TRAJECTORY_FILE), format_trajectory(&est).as_bytes())?;
    let ck = Checkpoint {
        config: config.clone(),
        atlas: session.atlas,
        ground_truth: session.gt,
    };
    let metrics = RunMetrics {
        config_hash: hex(&config.config_hash()),
        scene_hash: hex(&config.scene_hash()),
        keyframes: ids.len(),
        submaps: ck.atlas.submaps.len(),
        nodes: ck.atlas.node_count(),
        loop_events: session.loops.len(),
        eval: evaluate(config, &ck)?,
    };
    write_metrics(&out.join(METRICS_FILE), &metrics)?;
    Ok(RunReport {
        metrics,
        loops: session.loops,
        wall_seconds,
        checkpoint: path,
    })
}

fn write_metrics<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable metrics");
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Renders color, depth and uncertainty images for every pose in a
/// trajectory file. Returns the number of poses rendered.
pub fn cmd_render(checkpoint_path: &Path, poses_path: &Path, out: &Path) -> Result<usize> {
    let ck = checkpoint::load(checkpoint_path)?;
    let text = std::fs::read_to_string(poses_path).map_err(|e| Error::io(poses_path, e))?;
    let poses = parse_trajectory(&text, poses_path)?;
    let cam = ck.config.camera;
    for (i, (_, pose)) in poses.iter().enumerate() {
        let view = ck.atlas.render_fused(pose, &cam)?;
        write_file(&out.join(format!("color_{i:04}.ppm")), &encode_ppm(&view.color))?;
        write_file(&out.join(format!("depth_{i:04}.pgm")), &encode_pgm16(&view.depth, DEPTH_SCALE))?;
        write_file(
            &out.join(format!("uncertainty_{i:04}.pgm")),
            &encode_uncertainty(&view.uncertainty, cam.width, cam.height),
        )?;
    }
    Ok(poses.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshReport {
    pub vertices: usize,
    pub triangles: usize,
}

/// Extracts the 0.5 level set of the fused occupancy and writes an ASCII
/// PLY file. An empty map is an error and writes nothing.
pub fn cmd_mesh(checkpoint_path: &Path, resolution: Option<usize>, out_file: &Path) -> Result<MeshReport> {
    let ck = checkpoint::load(checkpoint_path)?;
    let mesh = extract_mesh(&ck.atlas, resolution)?;
    write_file(out_file, to_ply(&mesh).as_bytes())?;
    Ok(MeshReport {
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
    })
}

/// Scores a checkpoint against the scene oracle of `config`, which must
/// describe the same scene the checkpoint was built from.
pub fn cmd_eval(checkpoint_path: &Path, config: &RunConfig, out: &Path) -> Result<EvalSummary> {
    config.validate()?;
    let ck = checkpoint::load(checkpoint_path)?;
    if ck.config.scene_hash() != config.scene_hash() {
        return Err(Error::SceneMismatch);
    }
    let summary = evaluate(config, &ck)?;
    write_metrics(&out.join(METRICS_FILE), &summary)?;
    Ok(summary)
}
