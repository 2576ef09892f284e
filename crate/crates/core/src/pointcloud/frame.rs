use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Pixels at or below zero, and non-finite pixels, carry no measurement.
#[inline]
pub fn is_valid<T: Real>(v: T) -> bool {
    v > T::zero() && v.finite()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> Intrinsics<T> {
    /// Square pixels with the principal point at the image center.
    pub fn centered(width: usize, height: usize, focal_px: f64) -> Self {
        Self {
            fx: T::lit(focal_px),
            fy: T::lit(focal_px),
            cx: T::lit((width as f64 - 1.0) / 2.0),
            cy: T::lit((height as f64 - 1.0) / 2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("frame is {got:?}, expected {expected:?}")]
pub struct DimensionMismatch {
    pub got: (usize, usize),
    pub expected: (usize, usize),
}

/// Row-major depth image in millimeters; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame<T> {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<T>,
    pub intrinsics: Intrinsics<T>,
    pub frame_index: u64,
}

impl<T: Real> DepthFrame<T> {
    pub fn new(width: usize, height: usize, depth: Vec<T>, intrinsics: Intrinsics<T>) -> Result<Self, DimensionMismatch> {
        if depth.len() != width * height {
            return Err(DimensionMismatch { got: (depth.len(), 1), expected: (width, height) });
        }
        Ok(Self { width, height, depth, intrinsics, frame_index: 0 })
    }

    pub fn at(&self, u: usize, v: usize) -> T {
        self.depth[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|z| is_valid(**z)).count()
    }
}

/// Same layout as [`DepthFrame`], values are `K / z`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityFrame<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
    pub intrinsics: Intrinsics<T>,
    pub frame_index: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T> {
    /// Camera-frame points (mm).
    pub points: Vec<[T; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl<T> PointCloud<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
