//! Run configuration: one TOML document with nested sections. Unknown keys
//! are rejected at every level.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::scene::SceneSpec;
use crate::submaps::MappingConfig;
use crate::tracking::{DriftConfig, KeyframePolicy, LoopPolicy, TrajectoryConfig};

/// Version of the configuration dialect; bumped on incompatible changes.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Held-out poses sampled for evaluation.
    pub views: usize,
    /// Maximum position jitter of an evaluation pose around a keyframe (m).
    pub jitter_position: f64,
    /// Maximum heading jitter (deg).
    pub jitter_yaw_deg: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            views: 100,
            jitter_position: 0.1,
            jitter_yaw_deg: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub scene: SceneSpec,
    pub camera: Intrinsics,
    pub trajectory: TrajectoryConfig,
    pub drift: DriftConfig,
    pub keyframes: KeyframePolicy,
    #[serde(rename = "loop")]
    pub loop_policy: LoopPolicy,
    pub mapping: MappingConfig,
    pub eval: EvalConfig,
    /// Weight of loop edges relative to odometry edges.
    pub loop_information: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            scene: SceneSpec::default_room(),
            camera: default_camera(),
            trajectory: TrajectoryConfig::default(),
            drift: DriftConfig::default(),
            keyframes: KeyframePolicy::default(),
            loop_policy: LoopPolicy::default(),
            mapping: MappingConfig::default(),
            eval: EvalConfig::default(),
            loop_information: 100.0,
        }
    }
}

/// 160 × 120 pinhole with a 67° horizontal field of view.
pub fn default_camera() -> Intrinsics {
    Intrinsics {
        fx: 120.0,
        fy: 120.0,
        cx: 79.5,
        cy: 59.5,
        width: 160,
        height: 120,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Parse {
                kind: "config",
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.scene.validate()?;
        self.camera.validate()?;
        self.trajectory.validate()?;
        self.drift.validate()?;
        self.mapping.validate()?;
        let k = &self.keyframes;
        if !(k.delta_t > 0.0 && k.delta_r_deg > 0.0) {
            return Err(Error::Config("keyframe thresholds must be positive".into()));
        }
        let l = &self.loop_policy;
        if !(l.radius > 0.0 && l.angle_deg > 0.0) {
            return Err(Error::Config("loop thresholds must be positive".into()));
        }
        if !(self.loop_information > 0.0) {
            return Err(Error::Config("loop_information must be positive".into()));
        }
        if self.eval.views == 0 {
            return Err(Error::Config("eval.views must be positive".into()));
        }
        Ok(())
    }

    /// Hash of the scene and camera; a checkpoint can only be evaluated
    /// against a config with the same scene hash.
    pub fn scene_hash(&self) -> [u8; 32] {
        let text = serde_json::to_vec(&(&self.scene, &self.camera)).expect("scene serializes");
        Sha256::digest(&text).into()
    }

    pub fn config_hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
