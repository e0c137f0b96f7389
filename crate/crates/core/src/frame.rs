//! Image containers and the keyframe packet handed from tracking to mapping.

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn filled(width: u32, height: u32, value: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn get(&self, u: u32, v: u32) -> [f64; 3] {
        self.data[(v * self.width + u) as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, c: [f64; 3]) {
        self.data[(v * self.width + u) as usize] = c;
    }

    /// One plane per channel, each `width * height` long.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().map(|p| p[c]).collect()
    }
}

/// Row-major ray-length depth in meters; `0` marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.data[(v * self.width + u) as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, d: f64) {
        self.data[(v * self.width + u) as usize] = d;
    }

    pub fn is_valid(d: f64) -> bool {
        d > 0.0 && d.is_finite()
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.data.iter().map(|&d| Self::is_valid(d)).collect()
    }
}

/// An RGB-D keyframe with its current world pose estimate (world ← camera).
#[derive(Clone, Debug)]
pub struct KeyframePacket {
    pub id: u64,
    pub timestamp: f64,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub color: RgbImage,
    pub depth: DepthImage,
}

impl KeyframePacket {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        let n = w as usize * h as usize;
        if self.color.width != w || self.color.height != h || self.color.data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "color image {}x{} vs intrinsics {w}x{h}",
                self.color.width, self.color.height
            )));
        }
        if self.depth.width != w || self.depth.height != h || self.depth.data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "depth image {}x{} vs intrinsics {w}x{h}",
                self.depth.width, self.depth.height
            )));
        }
        Ok(())
    }
}
