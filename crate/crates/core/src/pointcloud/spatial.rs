use serde::{Deserialize, Serialize};

use super::frame::{is_valid, DisparityFrame};
use super::ParamError;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialParams<T> {
    /// Number of four-pass iterations.
    pub magnitude: u32,
    pub alpha: T,
    /// Largest neighbor difference (disparity units) that is still smoothed.
    pub delta: T,
}

impl<T: Real> Default for SpatialParams<T> {
    fn default() -> Self {
        Self { magnitude: 2, alpha: T::lit(0.5), delta: T::lit(20.0) }
    }
}

impl<T: Real> SpatialParams<T> {
    pub(super) fn validate(&self) -> Result<(), ParamError> {
        if !(self.alpha > T::zero() && self.alpha <= T::one()) {
            return Err(ParamError::Alpha);
        }
        if !(self.delta > T::zero()) {
            return Err(ParamError::Delta);
        }
        if self.magnitude < 1 {
            return Err(ParamError::Magnitude);
        }
        Ok(())
    }
}

/// Edge-preserving recursive smoothing. Each iteration runs rows left to
/// right and right to left, then columns top to bottom and bottom to top.
pub fn spatial_filter<T: Real>(frame: &DisparityFrame<T>, params: &SpatialParams<T>) -> DisparityFrame<T> {
    let mut out = frame.clone();
    let (w, h) = (frame.width, frame.height);
    let v = &mut out.values;
    for _ in 0..params.magnitude {
        for row in 0..h {
            let line = |i: usize| row * w + i;
            pass(v, w, line, true, params);
            pass(v, w, line, false, params);
        }
        for col in 0..w {
            let line = |i: usize| i * w + col;
            pass(v, h, line, true, params);
            pass(v, h, line, false, params);
        }
    }
    out
}

/// One recursive pass over a line of `len` pixels addressed through `index`.
///
/// A valid pixel moves toward the previous output by `alpha` when the two
/// differ by less than `delta`. An invalid pixel whose previous output and
/// next input are both valid and closer than `delta` takes the previous output.
fn pass<T: Real>(v: &mut [T], len: usize, index: impl Fn(usize) -> usize, forward: bool, p: &SpatialParams<T>) {
    if len < 2 {
        return;
    }
    let at = |k: usize| if forward { index(k) } else { index(len - 1 - k) };
    let mut prev = v[at(0)];
    for k in 1..len {
        let i = at(k);
        let cur = v[i];
        if is_valid(cur) {
            if is_valid(prev) && (prev - cur).abs() < p.delta {
                v[i] = cur + p.alpha * (prev - cur);
            }
        } else if is_valid(prev) && k + 1 < len {
            let next = v[at(k + 1)];
            if is_valid(next) && (next - prev).abs() < p.delta {
                v[i] = prev;
            }
        }
        prev = v[i];
    }
}
