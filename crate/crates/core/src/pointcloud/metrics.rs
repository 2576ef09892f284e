//! Quality measures for filtered depth streams.

use super::frame::{is_valid, DepthFrame};
use crate::scalar::Real;

/// Scale from a depth change at pixel `i` to the displacement of its
/// deprojected point: `|dP| = |dz| * sqrt(1 + x'^2 + y'^2)`.
fn ray_scale<T: Real>(f: &DepthFrame<T>, i: usize) -> f64 {
    let k = &f.intrinsics;
    let x = ((i % f.width) as f64 - k.cx.to_f64_lossy()) / k.fx.to_f64_lossy();
    let y = ((i / f.width) as f64 - k.cy.to_f64_lossy()) / k.fy.to_f64_lossy();
    (1.0 + x * x + y * y).sqrt()
}

/// Sum of squared point displacements and pixel count over pixels valid in both frames.
pub fn point_jitter_sums<T: Real>(a: &DepthFrame<T>, b: &DepthFrame<T>) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for (i, (&za, &zb)) in a.depth.iter().zip(&b.depth).enumerate() {
        if is_valid(za) && is_valid(zb) {
            let d = (zb - za).to_f64_lossy() * ray_scale(a, i);
            sum += d * d;
            n += 1;
        }
    }
    (sum, n)
}

/// RMS frame-to-frame displacement of corresponding points (mm).
pub fn rms_point_jitter<T: Real>(frames: &[DepthFrame<T>]) -> Option<f64> {
    let (sum, n) = frames
        .windows(2)
        .map(|w| point_jitter_sums(&w[0], &w[1]))
        .fold((0.0, 0), |acc, (s, n)| (acc.0 + s, acc.1 + n));
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Interior pixels that are invalid while all four neighbors are valid.
pub fn single_pixel_holes<T: Real>(f: &DepthFrame<T>) -> Vec<usize> {
    let (w, h) = (f.width, f.height);
    let mut holes = Vec::new();
    for v in 1..h.saturating_sub(1) {
        for u in 1..w.saturating_sub(1) {
            let i = v * w + u;
            if !is_valid(f.depth[i])
                && [i - 1, i + 1, i - w, i + w].iter().all(|&j| is_valid(f.depth[j]))
            {
                holes.push(i);
            }
        }
    }
    holes
}

/// Returns `(filled, total)` single-pixel holes of `raw` that are valid in `filtered`.
pub fn hole_fill_counts<T: Real>(raw: &DepthFrame<T>, filtered: &DepthFrame<T>) -> (usize, usize) {
    let holes = single_pixel_holes(raw);
    let filled = holes.iter().filter(|&&i| is_valid(filtered.depth[i])).count();
    (filled, holes.len())
}
