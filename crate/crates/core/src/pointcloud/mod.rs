//! Depth-frame post-processing and deprojection.
//!
//! Stages, in order: range threshold, depth to disparity (`d = K / z`),
//! edge-preserving spatial smoothing, temporal smoothing with hole
//! persistence, disparity back to depth, pinhole deprojection.

mod frame;
pub mod io;
pub mod metrics;
mod spatial;
pub mod synth;
mod temporal;

pub use frame::{is_valid, DepthFrame, DimensionMismatch, DisparityFrame, Intrinsics, PointCloud};
pub use spatial::{spatial_filter, SpatialParams};
pub use temporal::{TemporalFilter, TemporalParams};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams<T> {
    pub z_min: T,
    pub z_max: T,
    /// Disparity scale `K` (mm).
    pub disparity_k: T,
    pub spatial: SpatialParams<T>,
    pub temporal: TemporalParams<T>,
}

impl<T: Real> Default for PipelineParams<T> {
    fn default() -> Self {
        Self {
            z_min: T::zero(),
            z_max: T::lit(1000.0),
            disparity_k: T::lit(32000.0),
            spatial: SpatialParams::default(),
            temporal: TemporalParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("z_min must be below z_max")]
    Range,
    #[error("disparity constant must be positive")]
    DisparityK,
    #[error("alpha must be in (0, 1]")]
    Alpha,
    #[error("delta must be positive")]
    Delta,
    #[error("magnitude must be at least 1")]
    Magnitude,
}

impl<T: Real> PipelineParams<T> {
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.z_min < self.z_max) {
            return Err(ParamError::Range);
        }
        if !(self.disparity_k > T::zero()) {
            return Err(ParamError::DisparityK);
        }
        self.spatial.validate()?;
        self.temporal.validate()
    }
}

/// Marks pixels outside `[z_min, z_max]` invalid.
pub fn threshold_filter<T: Real>(frame: &DepthFrame<T>, z_min: T, z_max: T) -> DepthFrame<T> {
    let mut out = frame.clone();
    for z in out.depth.iter_mut() {
        if *z < z_min || *z > z_max || !z.finite() {
            *z = T::zero();
        }
    }
    out
}

pub fn to_disparity<T: Real>(frame: &DepthFrame<T>, k: T) -> DisparityFrame<T> {
    DisparityFrame {
        width: frame.width,
        height: frame.height,
        values: frame.depth.iter().map(|&z| if is_valid(z) { k / z } else { T::zero() }).collect(),
        intrinsics: frame.intrinsics,
        frame_index: frame.frame_index,
    }
}

pub fn from_disparity<T: Real>(frame: &DisparityFrame<T>, k: T) -> DepthFrame<T> {
    DepthFrame {
        width: frame.width,
        height: frame.height,
        depth: frame.values.iter().map(|&d| if is_valid(d) { k / d } else { T::zero() }).collect(),
        intrinsics: frame.intrinsics,
        frame_index: frame.frame_index,
    }
}

/// Pinhole deprojection of every valid pixel: `x = (u - cx) z / fx`, `y = (v - cy) z / fy`.
pub fn deproject<T: Real>(frame: &DepthFrame<T>) -> PointCloud<T> {
    let k = &frame.intrinsics;
    let points = frame
        .depth
        .iter()
        .enumerate()
        .filter(|(_, z)| is_valid(**z))
        .map(|(i, &z)| {
            let (u, v) = (T::lit((i % frame.width) as f64), T::lit((i / frame.width) as f64));
            [(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z]
        })
        .collect();
    PointCloud { points, colors: None }
}

/// Stateful pipeline for one depth stream; frames must be fed in order.
#[derive(Debug, Clone)]
pub struct Pipeline<T: Real> {
    params: PipelineParams<T>,
    temporal: TemporalFilter<T>,
}

impl<T: Real> Pipeline<T> {
    pub fn new(params: PipelineParams<T>) -> Result<Self, ParamError> {
        params.validate()?;
        Ok(Self { temporal: TemporalFilter::new(params.temporal), params })
    }

    pub fn params(&self) -> &PipelineParams<T> {
        &self.params
    }

    /// Runs every stage and returns the filtered depth frame.
    pub fn filter(&mut self, frame: &DepthFrame<T>) -> Result<DepthFrame<T>, DimensionMismatch> {
        let p = &self.params;
        let ranged = threshold_filter(frame, p.z_min, p.z_max);
        let disp = to_disparity(&ranged, p.disparity_k);
        let smoothed = spatial_filter(&disp, &p.spatial);
        let stable = self.temporal.apply(&smoothed)?;
        Ok(from_disparity(&stable, p.disparity_k))
    }

    pub fn process(&mut self, frame: &DepthFrame<T>) -> Result<PointCloud<T>, DimensionMismatch> {
        self.filter(frame).map(|f| deproject(&f))
    }
}

/// Runs a whole stream through a fresh pipeline.
pub fn run_pipeline<T: Real, I>(frames: I, params: PipelineParams<T>) -> Result<Vec<PointCloud<T>>, PipelineError>
where
    I: IntoIterator<Item = DepthFrame<T>>,
{
    let mut pipe = Pipeline::new(params)?;
    frames.into_iter().map(|f| pipe.process(&f).map_err(PipelineError::from)).collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Dimensions(#[from] DimensionMismatch),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, depth: Vec<f64>) -> DepthFrame<f64> {
        DepthFrame::new(w, h, depth, Intrinsics::centered(w, h, 100.0)).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let f = frame(3, 1, vec![1200.0, 500.0, 0.0]);
        let t = threshold_filter(&f, 0.0, 1000.0);
        assert_eq!(t.depth, vec![0.0, 500.0, 0.0]);
        assert_eq!(threshold_filter(&t, 0.0, 1000.0), t);
        let empty = frame(2, 2, vec![0.0; 4]);
        assert_eq!(threshold_filter(&empty, 0.0, 1000.0), empty);
    }

    #[test]
    fn disparity_examples() {
        let f = frame(2, 1, vec![500.0, 0.0]);
        let d = to_disparity(&f, 32000.0);
        assert_eq!(d.values, vec![64.0, 0.0]);
        assert_eq!(from_disparity(&d, 32000.0).depth, vec![500.0, 0.0]);
    }

    #[test]
    fn deprojection_pinhole() {
        let mut f = frame(3, 3, vec![0.0; 9]);
        f.depth[8] = 400.0; // u = 2, v = 2, center at 1,1
        let cloud = deproject(&f);
        assert_eq!(cloud.points, vec![[4.0, 4.0, 400.0]]);
    }

    #[test]
    fn empty_frame_gives_empty_cloud() {
        let clouds = run_pipeline(vec![frame(4, 4, vec![0.0; 16])], PipelineParams::default()).unwrap();
        assert!(clouds[0].points.is_empty());
    }

    #[test]
    fn noiseless_plane_stays_on_plane() {
        let scene = synth::SceneSpec::plane(64, 48, 600.0);
        let frames: Vec<DepthFrame<f64>> = synth::SynthScene::new(scene).take(5).collect();
        for cloud in run_pipeline(frames, PipelineParams::default()).unwrap() {
            assert_eq!(cloud.len(), 64 * 48);
            assert!(cloud.points.iter().all(|p| (p[2] - 600.0).abs() < 1.0));
        }
    }

    #[test]
    fn params_validated() {
        let mut p = PipelineParams::<f64>::default();
        p.spatial.alpha = 1.5;
        assert_eq!(p.validate(), Err(ParamError::Alpha));
        p = PipelineParams::default();
        p.z_max = -1.0;
        assert_eq!(p.validate(), Err(ParamError::Range));
    }
}
