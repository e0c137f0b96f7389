//! `nimap` command-line front end. Failures exit nonzero after printing one
//! line of the form `error kind=<kind> msg="<message>"` to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nimap_core::commands::{cmd_eval, cmd_mesh, cmd_render, cmd_run, cmd_simulate, CHECKPOINT_FILE};
use nimap_core::{Error, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "nimap", version, about = "Neural implicit RGB-D mapping with submap loop correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write ground-truth RGB-D frames and trajectories.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the full mapping pipeline and save a checkpoint.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render color, depth and uncertainty at the poses of a trajectory file.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trajectory file with one `t tx ty tz qx qy qz qw` pose per line.
        #[arg(long)]
        poses: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Extract a colored surface mesh as ASCII PLY.
    Mesh {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Lattice cells along the longest side of the map; one per leaf
        /// when omitted.
        #[arg(long)]
        resolution: Option<usize>,
        /// Output file, or a directory to receive `mesh.ply`.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Score a checkpoint against the scene oracle.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn mesh_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "ply") {
        out.to_path_buf()
    } else {
        out.join("mesh.ply")
    }
}

fn execute(command: Command) -> Result<String, Error> {
    match command {
        Command::Simulate { cfg, out } => {
            let r = cmd_simulate(&load_config(&cfg)?, &out)?;
            Ok(format!("simulated {} frames into {}", r.frames, out.display()))
        }
        Command::Run { cfg, out } => {
            let r = cmd_run(&load_config(&cfg)?, &out)?;
            let e = &r.metrics.eval;
            Ok(format!(
                "keyframes={} submaps={} nodes={} loops={} depth_l1_cm={:.3} psnr_db={:.2} ssim={:.3} seconds={:.1}",
                r.metrics.keyframes,
                r.metrics.submaps,
                r.metrics.nodes,
                r.metrics.loop_events,
                e.depth_l1_cm,
                e.psnr_db,
                e.ssim,
                r.wall_seconds
            ))
        }
        Command::Render { checkpoint, poses, out } => {
            let n = cmd_render(&checkpoint, &poses, &out)?;
            Ok(format!("rendered {n} views into {}", out.display()))
        }
        Command::Mesh {
            checkpoint,
            resolution,
            out,
        } => {
            let path = mesh_path(&out);
            let r = cmd_mesh(&checkpoint, resolution, &path)?;
            Ok(format!("vertices={} triangles={} file={}", r.vertices, r.triangles, path.display()))
        }
        Command::Eval { checkpoint, cfg, out } => {
            let checkpoint = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let s = cmd_eval(&checkpoint, &load_config(&cfg)?, &out)?;
            Ok(format!(
                "views={} depth_l1_cm={:.3} psnr_db={:.2} ssim={:.3} mean_uncertainty={:.4} ate_cm={}",
                s.views,
                s.depth_l1_cm,
                s.psnr_db,
                s.ssim,
                s.mean_uncertainty,
                s.ate_cm.map_or("na".into(), |a| format!("{a:.3}"))
            ))
        }
    }
}

fn error_line(kind: &str, msg: &str) -> String {
    format!("error kind={kind} msg={:?}", msg.replace('\n', " "))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("{}", error_line("threads", &e.to_string()));
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            log::debug!("{e:?}");
            ExitCode::FAILURE
        }
    }
}
