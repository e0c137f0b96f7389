use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
version = 1
seed = 3

[camera]
fx = 30.0
fy = 30.0
cx = 19.5
cy = 14.5
width = 40
height = 30

[drift]
sigma_t = 0.0
sigma_r = 0.0
bias_yaw_deg = 0.0

[trajectory]
closed = false
laps = 1.0
speed = 0.5
frame_rate = 10.0

[[trajectory.waypoints]]
position = [-1.0, 0.0, 1.4]
yaw_deg = 90.0

[[trajectory.waypoints]]
position = [0.0, 0.0, 1.4]
yaw_deg = 90.0

[mapping]
m_pixels = 256
iterations = 40

[eval]
views = 4
"#;

fn nimap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nimap"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn error_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr)
        .lines()
        .find(|l| l.starts_with("error kind="))
        .unwrap_or_default()
        .to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_deterministic_and_noise_free_estimate_matches() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = nimap(&["simulate", "--config", &cfg, "--out", s(out)]);
        assert!(o.status.success(), "{}", error_line(&o));
    }
    let gt = fs::read_to_string(a.join("trajectory_gt.txt")).unwrap();
    let est = fs::read_to_string(a.join("trajectory_est.txt")).unwrap();
    assert_eq!(gt, est);
    let n = gt.lines().count();
    let frames: Vec<_> = fs::read_dir(a.join("frames")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(frames.len(), 2 * n);
    for f in frames {
        assert_eq!(fs::read(a.join("frames").join(&f)).unwrap(), fs::read(b.join("frames").join(&f)).unwrap());
    }
}

#[test]
fn run_render_mesh_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = nimap(&["run", "--config", &cfg, "--out", s(&out), "--threads", "1"]);
    assert!(o.status.success(), "{}", error_line(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("loops=0"));
    let ck = out.join("checkpoint.nimap");
    assert!(ck.exists());
    assert_eq!(fs::read_to_string(out.join("loops.jsonl")).unwrap(), "");

    let poses = out.join("trajectory_est.txt");
    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    for r in [&r1, &r2] {
        let o = nimap(&["render", "--checkpoint", s(&ck), "--poses", s(&poses), "--out", s(r)]);
        assert!(o.status.success(), "{}", error_line(&o));
    }
    for e in fs::read_dir(&r1).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(fs::read(r1.join(&name)).unwrap(), fs::read(r2.join(&name)).unwrap());
    }

    let ply = dir.path().join("m.ply");
    let o = nimap(&["mesh", "--checkpoint", s(&ck), "--out", s(&ply)]);
    assert!(o.status.success(), "{}", error_line(&o));
    assert!(fs::read_to_string(&ply).unwrap().starts_with("ply\nformat ascii 1.0\n"));

    let o = nimap(&["eval", "--checkpoint", s(&ck), "--config", &cfg, "--out", s(&out)]);
    assert!(o.status.success(), "{}", error_line(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("views=4"));

    let other = write_config(dir.path(), &SMALL.replace("seed = 3", "seed = 3\n[scene]\nbackground = [1.0, 1.0, 1.0]\n[[scene.primitives]]\nkind = \"sphere\"\ncenter = [0.0, 0.0, 0.0]\nradius = 1.0\ncolor = { kind = \"constant\", rgb = [1.0, 0.0, 0.0] }\n"));
    let o = nimap(&["eval", "--checkpoint", s(&ck), "--config", &other, "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(error_line(&o).starts_with("error kind=scene_mismatch"), "{}", error_line(&o));
}

#[test]
fn pose_outside_map_renders_background_with_full_uncertainty() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    assert!(nimap(&["run", "--config", &cfg, "--out", s(&out)]).status.success());
    let poses = dir.path().join("far.txt");
    fs::write(&poses, "0 500 500 500 0 0 0 1\n").unwrap();
    let r = dir.path().join("r");
    let o = nimap(&["render", "--checkpoint", s(&out.join("checkpoint.nimap")), "--poses", s(&poses), "--out", s(&r)]);
    assert!(o.status.success(), "{}", error_line(&o));
    let u = fs::read(r.join("uncertainty_0000.pgm")).unwrap();
    let raster = &u[u.len() - 40 * 30 * 2..];
    assert!(raster.iter().all(|b| *b == 0xff));
    let d = fs::read(r.join("depth_0000.pgm")).unwrap();
    assert!(d[d.len() - 40 * 30 * 2..].iter().all(|b| *b == 0));
}

#[test]
fn failures_print_one_parsable_line() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(dir.path(), "bogus = 1\n");
    let o = nimap(&["run", "--config", &bad, "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(error_line(&o).starts_with("error kind=parse"), "{}", error_line(&o));

    let o = nimap(&["render", "--checkpoint", "/nonexistent/ck", "--poses", "/nonexistent/p"]);
    assert!(error_line(&o).starts_with("error kind=io"));

    let o = nimap(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(error_line(&o).starts_with("error kind=usage"));
}

#[test]
fn empty_map_mesh_is_an_error_and_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let cfg = nimap_core::RunConfig::default();
    let atlas = nimap_core::SubmapAtlas::new(cfg.mapping.clone(), 0).unwrap();
    let ck = dir.path().join("empty.nimap");
    nimap_core::checkpoint::save(&ck, &cfg, &atlas, &Default::default()).unwrap();
    let ply = dir.path().join("m.ply");
    let o = nimap(&["mesh", "--checkpoint", s(&ck), "--out", s(&ply)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(error_line(&o).starts_with("error kind=empty_map"), "{}", error_line(&o));
    assert!(!ply.exists());
}
