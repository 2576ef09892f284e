use serde::{Deserialize, Serialize};

use super::frame::{is_valid, DimensionMismatch, DisparityFrame};
use super::ParamError;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalParams<T> {
    /// Weight of the current frame.
    pub alpha: T,
    pub delta: T,
    /// Frames an invalid pixel is back-filled from its history.
    pub persistence: u32,
}

impl<T: Real> Default for TemporalParams<T> {
    fn default() -> Self {
        Self { alpha: T::lit(0.4), delta: T::lit(20.0), persistence: 3 }
    }
}

impl<T: Real> TemporalParams<T> {
    pub(super) fn validate(&self) -> Result<(), ParamError> {
        if !(self.alpha > T::zero() && self.alpha <= T::one()) {
            return Err(ParamError::Alpha);
        }
        if !(self.delta > T::zero()) {
            return Err(ParamError::Delta);
        }
        Ok(())
    }
}

/// Per-pixel exponential smoothing across frames with a reset on large jumps
/// and a bounded hold for pixels that drop out.
#[derive(Debug, Clone)]
pub struct TemporalFilter<T> {
    params: TemporalParams<T>,
    dims: Option<(usize, usize)>,
    history: Vec<T>,
    missing: Vec<u32>,
}

impl<T: Real> TemporalFilter<T> {
    pub fn new(params: TemporalParams<T>) -> Self {
        Self { params, dims: None, history: Vec::new(), missing: Vec::new() }
    }

    pub fn reset(&mut self) {
        self.dims = None;
        self.history.clear();
        self.missing.clear();
    }

    pub fn apply(&mut self, frame: &DisparityFrame<T>) -> Result<DisparityFrame<T>, DimensionMismatch> {
        let dims = (frame.width, frame.height);
        match self.dims {
            None => {
                self.dims = Some(dims);
                self.history = vec![T::zero(); frame.values.len()];
                self.missing = vec![0; frame.values.len()];
            }
            Some(expected) if expected != dims => return Err(DimensionMismatch { got: dims, expected }),
            Some(_) => {}
        }
        let p = self.params;
        let mut out = frame.clone();
        for (i, o) in out.values.iter_mut().enumerate() {
            let cur = frame.values[i];
            let hist = self.history[i];
            let value = if is_valid(cur) {
                self.missing[i] = 0;
                if is_valid(hist) && (cur - hist).abs() < p.delta {
                    p.alpha * cur + (T::one() - p.alpha) * hist
                } else {
                    cur
                }
            } else if is_valid(hist) && self.missing[i] < p.persistence {
                self.missing[i] += 1;
                hist
            } else {
                T::zero()
            };
            *o = value;
            self.history[i] = value;
        }
        Ok(out)
    }
}
