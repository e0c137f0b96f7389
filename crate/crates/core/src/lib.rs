//! Octree-anchored neural implicit RGB-D mapping with submaps that are
//! rigidly re-anchored and fine-tuned after loop closure.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod io;
mod mc_tables;
pub mod mesh;
pub mod metrics;
pub mod nets;
pub mod octree;
pub mod pipeline;
pub mod renderer;
pub mod scene;
pub mod submaps;
pub mod tracking;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use frame::{DepthImage, KeyframePacket, RgbImage};
pub use geometry::{Intrinsics, Pose, Ray, Twist, Vec3};
pub use octree::{GridConfig, MortonCode, OctreeFeatureGrid};
pub use renderer::{DecoderConfig, FieldModel, RenderConfig, RenderedView};
pub use scene::SceneSpec;
pub use submaps::{MappingConfig, SubmapAtlas};
pub use tracking::{DriftConfig, PoseGraph, TrajectoryConfig};
pub use pipeline::Session;
