#![allow(dead_code)]

use nalgebra::{Matrix6, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use teleop_core::kinematics::JointVector;
use teleop_core::{ArmModel, RobotPose};

pub const N: usize = 16;

pub fn valid(v: f64) -> bool {
    v > 0.0
}

/// Straightforward grid version: iterations x directions x lines x pixels.
pub fn spatial_oracle(input: &[f64], w: usize, h: usize, magnitude: u32, alpha: f64, delta: f64) -> Vec<f64> {
    let mut g: Vec<Vec<f64>> = (0..h).map(|y| input[y * w..(y + 1) * w].to_vec()).collect();
    for _ in 0..magnitude {
        for dir in 0..4 {
            let (lines, len) = if dir < 2 { (h, w) } else { (w, h) };
            for line in 0..lines {
                let cell = |k: usize| -> (usize, usize) {
                    match dir {
                        0 => (line, k),
                        1 => (line, w - 1 - k),
                        2 => (k, line),
                        _ => (h - 1 - k, line),
                    }
                };
                for k in 1..len {
                    let (py, px) = cell(k - 1);
                    let (y, x) = cell(k);
                    let prev = g[py][px];
                    let cur = g[y][x];
                    if valid(cur) && valid(prev) && (prev - cur).abs() < delta {
                        g[y][x] = cur + alpha * (prev - cur);
                    } else if !valid(cur) && valid(prev) && k + 1 < len {
                        let (ny, nx) = cell(k + 1);
                        let next = g[ny][nx];
                        if valid(next) && (next - prev).abs() < delta {
                            g[y][x] = prev;
                        }
                    }
                }
            }
        }
    }
    g.concat()
}

pub fn temporal_oracle(frames: &[Vec<f64>], alpha: f64, delta: f64, persistence: u32) -> Vec<Vec<f64>> {
    let n = frames[0].len();
    let mut hist = vec![0.0; n];
    let mut last_valid: Vec<Option<usize>> = vec![None; n];
    let mut out = Vec::new();
    for (t, f) in frames.iter().enumerate() {
        let mut o = vec![0.0; n];
        for i in 0..n {
            let cur = f[i];
            o[i] = if valid(cur) {
                last_valid[i] = Some(t);
                if valid(hist[i]) && (cur - hist[i]).abs() < delta {
                    alpha * cur + (1.0 - alpha) * hist[i]
                } else {
                    cur
                }
            } else {
                match last_valid[i] {
                    Some(s) if valid(hist[i]) && t - s <= persistence as usize => hist[i],
                    _ => 0.0,
                }
            };
            hist[i] = o[i];
        }
        out.push(o);
    }
    out
}

pub fn random_frame(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base: f64 = rng.gen_range(40.0..200.0);
    (0..N * N)
        .map(|_| match rng.gen_range(0..10) {
            0 => 0.0,
            1 => base + rng.gen_range(-80.0..80.0),
            _ => base + rng.gen_range(-15.0..15.0),
        })
        .map(|v: f64| v.max(0.0))
        .collect()
}

pub fn random_q(arm: &ArmModel, rng: &mut ChaCha8Rng) -> JointVector<f64> {
    let mut q = [0.0f64; 6];
    for (i, v) in q.iter_mut().enumerate() {
        let [lo, hi] = arm.limits_deg[i];
        *v = rng.gen_range(lo * 0.9..hi * 0.9);
    }
    q[4] = q[4].signum() * q[4].abs().max(10.0);
    JointVector(q)
}

/// Central differences of position (mm/rad) and of the body-to-base rotation (rad/rad).
pub fn numeric_jacobian(arm: &ArmModel, q: &JointVector<f64>) -> Matrix6<f64> {
    let h_deg = 1e-5f64;
    let h = h_deg.to_radians();
    let mut j = Matrix6::zeros();
    for c in 0..6 {
        let (mut qp, mut qm) = (*q, *q);
        qp.0[c] += h_deg;
        qm.0[c] -= h_deg;
        let (fp, fm) = (arm.fk(&qp), arm.fk(&qm));
        let dp = (fp.position - fm.position) / (2.0 * h);
        let rel: UnitQuaternion<f64> = fp.orientation * fm.orientation.inverse();
        let dw = rel.scaled_axis() / (2.0 * h);
        for r in 0..3 {
            j[(r, c)] = dp[r];
            j[(r + 3, c)] = dw[r];
        }
    }
    j
}

pub fn adversarial_target(rng: &mut ChaCha8Rng, current: &RobotPose) -> RobotPose {
    let mut t = *current;
    match rng.gen_range(0..6) {
        0 => t.position.x += rng.gen_range(-2000.0..2000.0),
        1 => {
            t.position.y += rng.gen_range(-30.0..30.0);
            t.position.z += rng.gen_range(-30.0..30.0);
        }
        2 => t.position += Vector3::new(0.5, -0.5, 0.25) * rng.gen_range(-2.0..2.0),
        3 => {
            let axis = Vector3::new(rng.gen(), rng.gen(), rng.gen::<f64>()) - Vector3::repeat(0.5);
            t.orientation = UnitQuaternion::from_scaled_axis(axis * 6.0) * t.orientation;
        }
        4 => t.position.x = f64::NAN,
        _ => t.position.z += rng.gen_range(-400.0..400.0),
    }
    t
}
