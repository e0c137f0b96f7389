use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: u32,
        v: u32,
        width: u32,
        height: u32,
    },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation angle {0} too close to pi for a stable logarithm")]
    IllConditionedLog(f64),

    #[error("grid coordinate {0} exceeds the 21-bit Morton range")]
    MortonOverflow(u32),
    #[error("point {0:?} lies outside the grid extent")]
    OutsideExtent([f64; 3]),
    #[error("query record is stale (grid version {record} vs {grid})")]
    StaleRecord { record: u64, grid: u64 },
    #[error("invalid grid configuration: {0}")]
    InvalidGridConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient, optimizer step skipped")]
    NonFiniteGradient,

    #[error("occupancy {0} outside [0, 1]")]
    OccupancyOutOfRange(f64),
    #[error("no observed rays in the batch")]
    NoObservedRays,

    #[error("missing pose for anchor keyframe {0}")]
    MissingAnchorPose(u64),
    #[error("unknown keyframe {0}")]
    UnknownKeyframe(u64),

    #[error("trajectory exhausted after {0} frames")]
    TrajectoryExhausted(usize),
    #[error("pose graph is disconnected")]
    DisconnectedGraph,
    #[error("pose graph normal equations are singular")]
    SingularSystem,
    #[error("pose graph has no node {0}")]
    UnknownNode(u64),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),
    #[error("image shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("scene hash in checkpoint does not match the configuration")]
    SceneMismatch,
    #[error("map is empty")]
    EmptyMap,
    #[error("malformed {kind} file {path}: {msg}")]
    Parse {
        kind: &'static str,
        path: PathBuf,
        msg: String,
    },
    #[error("keyframe {kf}: {source}")]
    AtKeyframe {
        kf: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_keyframe(kf: u64, source: Error) -> Self {
        Error::AtKeyframe {
            kf,
            source: Box::new(source),
        }
    }

    /// Short stable identifier used in machine-parsable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::PixelOutOfBounds { .. } => "pixel_out_of_bounds",
            Error::InvalidIntrinsics(_) => "invalid_intrinsics",
            Error::IllConditionedLog(_) => "ill_conditioned_log",
            Error::MortonOverflow(_) => "morton_overflow",
            Error::OutsideExtent(_) => "outside_extent",
            Error::StaleRecord { .. } => "stale_record",
            Error::InvalidGridConfig(_) => "invalid_grid_config",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFiniteGradient => "non_finite_gradient",
            Error::OccupancyOutOfRange(_) => "occupancy_out_of_range",
            Error::NoObservedRays => "no_observed_rays",
            Error::MissingAnchorPose(_) => "missing_anchor_pose",
            Error::UnknownKeyframe(_) => "unknown_keyframe",
            Error::TrajectoryExhausted(_) => "trajectory_exhausted",
            Error::DisconnectedGraph => "disconnected_graph",
            Error::SingularSystem => "singular_system",
            Error::UnknownNode(_) => "unknown_node",
            Error::MetricUndefined(_) => "metric_undefined",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Config(_) => "config",
            Error::CorruptCheckpoint(_) => "corrupt_checkpoint",
            Error::SceneMismatch => "scene_mismatch",
            Error::EmptyMap => "empty_map",
            Error::Parse { .. } => "parse",
            Error::AtKeyframe { source, .. } => source.kind(),
            Error::Io { .. } => "io",
        }
    }
}
