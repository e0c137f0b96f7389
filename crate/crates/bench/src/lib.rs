//! Fixtures shared by the benchmarks.

use nimap_core::frame::KeyframePacket;
use nimap_core::tracking::generate_ground_truth;
use nimap_core::{Pose, RunConfig, SubmapAtlas};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A one-submap atlas built from the first keyframe of the default run,
/// trained for `iterations` steps, with that keyframe's pose.
pub fn trained_atlas(iterations: usize) -> (RunConfig, SubmapAtlas, Pose) {
    let mut cfg = RunConfig::default();
    cfg.mapping.m_pixels = 1024;
    let pose = generate_ground_truth(&cfg.trajectory).expect("default trajectory")[0];
    let (color, depth) = cfg.scene.render_gt_frame(&pose, &cfg.camera, 0);
    let packet = KeyframePacket {
        id: 0,
        timestamp: 0.0,
        intrinsics: cfg.camera,
        pose,
        color,
        depth,
    };
    let mut atlas = SubmapAtlas::new(cfg.mapping.clone(), cfg.seed).expect("default mapping config");
    let assignment = atlas.select_local_map(&packet).expect("first keyframe");
    atlas.integrate(packet, &assignment).expect("valid packet");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    atlas.train_keyframe(0, iterations, &mut rng).expect("observed keyframe");
    (cfg, atlas, pose)
}
