//! Forward/inverse kinematics and singularity measures for a 6R arm described
//! by modified (Craig) Denavit-Hartenberg parameters.
//!
//! Joint angles cross the public API in degrees; everything internal is in
//! radians. Lengths are millimeters.

use nalgebra::{Isometry3, Matrix6, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::pose::RobotPose;
use crate::scalar::Real;

pub const DOF: usize = 6;

/// One modified-DH row: `RotX(alpha) * TransX(a) * RotZ(theta + offset) * TransZ(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow<T> {
    /// Link length along the previous x axis (mm).
    pub a: T,
    /// Link twist about the previous x axis (rad).
    pub alpha: T,
    /// Link offset along the joint axis (mm).
    pub d: T,
    /// Constant added to the joint variable (rad).
    pub theta_offset: T,
}

/// Joint angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointVector<T>(pub [T; DOF]);

impl<T: Real> JointVector<T> {
    pub fn zeros() -> Self {
        Self([T::zero(); DOF])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.finite())
    }

    fn to_radians(self) -> [T; DOF] {
        self.0.map(|v| v.to_radians_generic())
    }

    fn from_radians(r: [T; DOF]) -> Self {
        Self(r.map(|v| v.to_degrees_generic()))
    }
}

impl<T> std::ops::Index<usize> for JointVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

trait AngleExt: Real {
    fn to_radians_generic(self) -> Self {
        self * Self::pi() / Self::lit(180.0)
    }
    fn to_degrees_generic(self) -> Self {
        self * Self::lit(180.0) / Self::pi()
    }
}

impl<T: Real> AngleExt for T {}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IkError {
    #[error("target at {distance:.1} mm is beyond max reach {reach:.1} mm")]
    Unreachable { distance: f64, reach: f64 },
    #[error("no convergence after {iterations} iterations (residual {position_mm:.4} mm, {orientation_deg:.4} deg)")]
    NoConvergence { iterations: usize, position_mm: f64, orientation_deg: f64 },
    #[error("joint {joint} would be at {value_deg:.2} deg, outside [{min_deg}, {max_deg}]")]
    JointLimit { joint: usize, value_deg: f64, min_deg: f64, max_deg: f64 },
    #[error("target is not finite")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("joint {0}: lower limit must be below upper limit")]
    BadLimits(usize),
    #[error("model has zero reach")]
    ZeroReach,
    #[error("non-finite model parameter")]
    NonFinite,
}

/// Stopping rule and damping for the DLS solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkParams<T> {
    pub damping: T,
    pub max_iterations: usize,
    pub position_tol_mm: T,
    pub orientation_tol_deg: T,
    /// Largest per-iteration joint update (rad); keeps far-seed solves stable.
    pub max_step_rad: T,
}

impl<T: Real> Default for IkParams<T> {
    fn default() -> Self {
        Self {
            damping: T::lit(0.01),
            max_iterations: 100,
            position_tol_mm: T::lit(0.1),
            orientation_tol_deg: T::lit(0.1),
            max_step_rad: T::lit(0.3),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel<T> {
    pub id: String,
    pub rows: [DhRow<T>; DOF],
    /// Per-joint `[min, max]` in degrees.
    pub limits_deg: [[T; 2]; DOF],
    /// Manipulability below which a configuration counts as singular (mm^3).
    pub w_min: T,
}

impl<T: Real> ArmModel<T> {
    pub fn new(
        id: impl Into<String>,
        rows: [DhRow<T>; DOF],
        limits_deg: [[T; 2]; DOF],
        w_min: T,
    ) -> Result<Self, ModelError> {
        let finite = rows
            .iter()
            .flat_map(|r| [r.a, r.alpha, r.d, r.theta_offset])
            .chain(limits_deg.iter().flatten().copied())
            .chain(std::iter::once(w_min))
            .all(|v| v.finite());
        if !finite {
            return Err(ModelError::NonFinite);
        }
        if let Some(j) = limits_deg.iter().position(|l| l[0] >= l[1]) {
            return Err(ModelError::BadLimits(j));
        }
        let m = Self { id: id.into(), rows, limits_deg, w_min };
        if m.max_reach() <= T::zero() {
            return Err(ModelError::ZeroReach);
        }
        Ok(m)
    }

    /// Desk-scale spherical-wrist arm. Placeholder geometry at collaborative-arm
    /// scale, not vendor data. Home (all zeros) puts the tool at
    /// (571, 0, 819) mm pointing along +x.
    pub fn default_arm() -> Self {
        let deg = |v: f64| T::lit(v.to_radians());
        let row = |a: f64, alpha: f64, d: f64, off: f64| DhRow {
            a: T::lit(a),
            alpha: deg(alpha),
            d: T::lit(d),
            theta_offset: deg(off),
        };
        let lim = |lo: f64, hi: f64| [T::lit(lo), T::lit(hi)];
        Self::new(
            "desk6r-v1",
            [
                row(0.0, 0.0, 265.0, 0.0),
                row(0.0, -90.0, 0.0, -90.0),
                row(444.0, 0.0, 0.0, 0.0),
                row(110.0, -90.0, 470.0, 0.0),
                row(0.0, 90.0, 0.0, 0.0),
                row(0.0, -90.0, 101.0, 0.0),
            ],
            [
                lim(-180.0, 180.0),
                lim(-135.0, 135.0),
                lim(-160.0, 160.0),
                lim(-225.0, 225.0),
                lim(-135.0, 135.0),
                lim(-270.0, 270.0),
            ],
            T::lit(1e-4),
        )
        .expect("default arm is valid")
    }

    /// Upper bound on the TCP distance from the base origin.
    pub fn max_reach(&self) -> T {
        self.rows
            .iter()
            .fold(T::zero(), |acc, r| acc + (r.a * r.a + r.d * r.d).sqrt())
    }

    /// Index of the first joint outside its limits, if any.
    pub fn limit_violation(&self, q: &JointVector<T>) -> Option<usize> {
        (0..DOF).find(|&i| q[i] < self.limits_deg[i][0] || q[i] > self.limits_deg[i][1])
    }

    /// Frame of every joint in the base frame, TCP frame last.
    pub fn frames(&self, q: &JointVector<T>) -> [Isometry3<T>; DOF] {
        let rad = q.to_radians();
        let mut acc = Isometry3::<T>::identity();
        std::array::from_fn(|i| {
            let r = &self.rows[i];
            let link = Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&Vector3::x_axis(), r.alpha))
                * Isometry3::from_parts(Translation3::new(r.a, T::zero(), T::zero()), UnitQuaternion::identity())
                * Isometry3::from_parts(
                    Translation3::identity(),
                    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rad[i] + r.theta_offset),
                )
                * Isometry3::from_parts(Translation3::new(T::zero(), T::zero(), r.d), UnitQuaternion::identity());
            acc *= link;
            acc
        })
    }

    pub fn fk(&self, q: &JointVector<T>) -> RobotPose<T> {
        let tcp = self.frames(q)[DOF - 1];
        RobotPose::from_parts(tcp.translation.vector, tcp.rotation)
    }

    /// Geometric Jacobian at the TCP. Rows 0..3 are linear velocity (mm/rad),
    /// rows 3..6 angular velocity, both in the base frame.
    pub fn jacobian(&self, q: &JointVector<T>) -> Matrix6<T> {
        let frames = self.frames(q);
        let p = frames[DOF - 1].translation.vector;
        let mut j = Matrix6::zeros();
        for (i, f) in frames.iter().enumerate() {
            let z = f.rotation * Vector3::z();
            let lin = z.cross(&(p - f.translation.vector));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        j
    }

    /// Yoshikawa manipulability `sqrt(det(J J^T))`.
    pub fn manipulability(&self, q: &JointVector<T>) -> T {
        let j = self.jacobian(q);
        let det = (j * j.transpose()).determinant();
        det.max(T::zero()).sqrt()
    }

    /// Signed Jacobian determinant. Its magnitude equals the manipulability;
    /// its sign flips whenever a path crosses a singular configuration.
    pub fn jacobian_determinant(&self, q: &JointVector<T>) -> T {
        self.jacobian(q).determinant()
    }

    pub fn is_singular(&self, q: &JointVector<T>) -> bool {
        self.manipulability(q) < self.w_min
    }

    pub fn ik(&self, target: &RobotPose<T>, seed: &JointVector<T>) -> Result<JointVector<T>, IkError> {
        self.ik_with(target, seed, &IkParams::default()).map(|s| s.joints)
    }

    /// Damped least squares: `dq = J^T (J J^T + lambda^2 I)^-1 e`.
    pub fn ik_with(
        &self,
        target: &RobotPose<T>,
        seed: &JointVector<T>,
        params: &IkParams<T>,
    ) -> Result<IkSolution<T>, IkError> {
        if !target.is_finite() || !seed.is_finite() {
            return Err(IkError::NonFinite);
        }
        let distance = target.position.norm();
        let reach = self.max_reach();
        if distance > reach {
            return Err(IkError::Unreachable { distance: distance.to_f64_lossy(), reach: reach.to_f64_lossy() });
        }

        let (q, iterations) = self.dls(target, seed.to_radians(), params, false)?;
        // Seed returned untouched when no correction was needed.
        let joints = if iterations == 0 { *seed } else { self.wrap_into_limits(JointVector::from_radians(q)) };
        let Some(j) = self.limit_violation(&joints) else {
            return Ok(IkSolution { joints, iterations });
        };
        // The free solve may settle on a branch outside the limits. Retry
        // with every iterate projected back into range.
        let clamped = self.clamp_to_limits(seed);
        let fine = IkParams { max_step_rad: params.max_step_rad * T::lit(0.2), max_iterations: params.max_iterations * 3, ..*params };
        let center = self.toward_center(&clamped);
        let mut starts = vec![(clamped, &fine, false), (clamped, params, true), (clamped, &fine, true), (center, &fine, true), (center, &fine, false)];
        starts.extend(self.mirrored_across_singularities(&clamped).into_iter().map(|q| (q, &fine, true)));
        for (start, p, project) in starts {
            if let Ok((q, more)) = self.dls(target, start.to_radians(), p, project) {
                let joints = self.wrap_into_limits(JointVector::from_radians(q));
                if self.limit_violation(&joints).is_none() {
                    return Ok(IkSolution { joints, iterations: iterations + more });
                }
            }
        }
        Err(IkError::JointLimit {
            joint: j + 1,
            value_deg: joints[j].to_f64_lossy(),
            min_deg: self.limits_deg[j][0].to_f64_lossy(),
            max_deg: self.limits_deg[j][1].to_f64_lossy(),
        })
    }

    /// Shifts out-of-range joints by whole turns when that lands them in range.
    fn wrap_into_limits(&self, mut q: JointVector<T>) -> JointVector<T> {
        let turn = T::lit(360.0);
        for (v, [lo, hi]) in q.0.iter_mut().zip(self.limits_deg.iter()) {
            while *v > *hi && *v - turn >= *lo {
                *v = *v - turn;
            }
            while *v < *lo && *v + turn <= *hi {
                *v = *v + turn;
            }
        }
        q
    }

    /// Copies of `q` with one joint reflected across a nearby manipulability
    /// minimum, i.e. started on the other branch of that singularity.
    fn mirrored_across_singularities(&self, q: &JointVector<T>) -> Vec<JointVector<T>> {
        const SPAN: i32 = 30;
        let w0 = self.manipulability(q);
        let mut out = Vec::new();
        for j in 0..DOF {
            let at = |k: i32| {
                let mut p = *q;
                p.0[j] = p.0[j] + T::lit(k as f64);
                (self.manipulability(&p), p.0[j])
            };
            let (w_min, k_min) = (-SPAN..=SPAN).map(|k| (at(k).0, k)).fold((w0, 0), |b, c| if c.0 < b.0 { c } else { b });
            if k_min.abs() < SPAN && k_min != 0 && w_min < w0 * T::lit(0.2) {
                let mut m = *q;
                m.0[j] = at(k_min).1 * T::lit(2.0) - q.0[j];
                out.push(self.clamp_to_limits(&m));
            }
        }
        out
    }

    /// Halfway between `q` and the middle of each joint range.
    fn toward_center(&self, q: &JointVector<T>) -> JointVector<T> {
        let mut out = *q;
        for (v, [lo, hi]) in out.0.iter_mut().zip(self.limits_deg.iter()) {
            *v = (*v + (*lo + *hi) * T::lit(0.5)) * T::lit(0.5);
        }
        out
    }

    fn clamp_to_limits(&self, q: &JointVector<T>) -> JointVector<T> {
        let mut out = *q;
        for (v, [lo, hi]) in out.0.iter_mut().zip(self.limits_deg.iter()) {
            *v = v.max(*lo).min(*hi);
        }
        out
    }

    /// Damped least-squares iterations from `q` (radians).
    fn dls(&self, target: &RobotPose<T>, mut q: [T; DOF], params: &IkParams<T>, project: bool) -> Result<([T; DOF], usize), IkError> {
        let lambda2 = params.damping * params.damping;
        let orient_tol = params.orientation_tol_deg.to_radians_generic();
        let mut iterations = 0;
        loop {
            let current = JointVector::from_radians(q);
            let pose = self.fk(&current);
            let e_pos = target.position - pose.position;
            let e_rot = (target.orientation * pose.orientation.inverse()).scaled_axis();
            let (pos_err, rot_err) = (e_pos.norm(), e_rot.norm());
            if pos_err < params.position_tol_mm && rot_err < orient_tol {
                return Ok((q, iterations));
            }
            let stuck = || IkError::NoConvergence {
                iterations,
                position_mm: pos_err.to_f64_lossy(),
                orientation_deg: rot_err.to_degrees_generic().to_f64_lossy(),
            };
            if iterations == params.max_iterations {
                return Err(stuck());
            }

            let j = self.jacobian(&current);
            let e = Vector6::new(e_pos.x, e_pos.y, e_pos.z, e_rot.x, e_rot.y, e_rot.z);
            let jjt = j * j.transpose() + Matrix6::identity() * lambda2;
            let Some(chol) = jjt.cholesky() else {
                return Err(stuck());
            };
            let mut dq = j.transpose() * chol.solve(&e);
            let biggest = dq.amax();
            if biggest > params.max_step_rad {
                dq *= params.max_step_rad / biggest;
            }
            for (qi, d) in q.iter_mut().zip(dq.iter()) {
                *qi += *d;
            }
            if project {
                q = self.clamp_to_limits(&JointVector::from_radians(q)).to_radians();
            }
            iterations += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution<T> {
    pub joints: JointVector<T>,
    pub iterations: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arm() -> ArmModel<f64> {
        ArmModel::default_arm()
    }

    // Frozen from an independent numpy product of the DH chain.
    const HOME_POS: [f64; 3] = [571.0, 0.0, 819.0];
    const HOME_WXYZ: [f64; 4] = [0.0, std::f64::consts::FRAC_1_SQRT_2, 0.0, std::f64::consts::FRAC_1_SQRT_2];

    #[test]
    fn home_pose_matches_golden() {
        let p = arm().fk(&JointVector::zeros());
        for i in 0..3 {
            assert!((p.position[i] - HOME_POS[i]).abs() < 1e-9, "{:?}", p.position);
        }
        let q = p.wxyz();
        let dot: f64 = q.iter().zip(HOME_WXYZ.iter()).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-12, "{q:?}");
    }

    #[test]
    fn base_joint_half_turn_rotates_xy() {
        let a = arm();
        let q = JointVector([10.0, 20.0, -30.0, 40.0, 50.0, 60.0]);
        let mut q2 = q;
        q2.0[0] += 180.0;
        let (p, p2) = (a.fk(&q).position, a.fk(&q2).position);
        assert!((p2.x + p.x).abs() < 1e-9 && (p2.y + p.y).abs() < 1e-9 && (p2.z - p.z).abs() < 1e-9);
    }

    #[test]
    fn fk_is_continuous() {
        let a = arm();
        let q = JointVector([5.0, -15.0, 25.0, 35.0, -45.0, 55.0]);
        let base = a.fk(&q);
        let mut last = f64::INFINITY;
        for eps in [1e-1, 1e-3, 1e-5, 1e-7] {
            let shifted = JointVector(q.0.map(|v| v + eps));
            let d = base.translation_to(&a.fk(&shifted));
            assert!(d < last);
            last = d;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn ik_fixed_point_takes_no_iterations() {
        let a = arm();
        let q = JointVector([12.0, -8.0, 33.0, -20.0, 40.0, 15.0]);
        let sol = a.ik_with(&a.fk(&q), &q, &IkParams::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.joints, q);
    }

    #[test]
    fn ik_unreachable_beyond_reach() {
        let a = arm();
        let mut t = a.fk(&JointVector::zeros());
        t.position = t.position.normalize() * (2.0 * a.max_reach());
        assert!(matches!(a.ik(&t, &JointVector::zeros()), Err(IkError::Unreachable { .. })));
    }

    #[test]
    fn ik_reports_joint_limit_instead_of_clamping() {
        let mut a = arm();
        let q = JointVector([0.0, 10.0, 20.0, 0.0, 30.0, 0.0]);
        let target = a.fk(&q);
        a.limits_deg[1] = [-135.0, 5.0];
        match a.ik(&target, &q) {
            Err(IkError::JointLimit { joint, .. }) => assert_eq!(joint, 2),
            other => panic!("expected JointLimit, got {other:?}"),
        }
    }

    #[test]
    fn ik_random_targets_converge() {
        let a = arm();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let q = JointVector(std::array::from_fn(|i| match i {
                4 => rng.gen_range(15.0..90.0),
                2 => rng.gen_range(-60.0..40.0),
                _ => rng.gen_range(-60.0..60.0),
            }));
            let seed = JointVector(q.0.map(|v| v + rng.gen_range(-5.0..5.0)));
            let target = a.fk(&q);
            let sol = a.ik(&target, &seed).unwrap();
            assert!(a.fk(&sol).translation_to(&target) < 0.1);
        }
    }

    #[test]
    fn wrist_singularity_detected() {
        let a = arm();
        let singular = JointVector([10.0, 20.0, -30.0, 40.0, 0.0, 60.0]);
        assert!(a.is_singular(&singular));
        // Joints 4 and 6 share a column there: the rank oracle.
        let j = a.jacobian(&singular);
        assert!((j.column(3) - j.column(5)).norm() < 1e-9);
        let generic = JointVector([10.0, 20.0, -30.0, 40.0, 50.0, 60.0]);
        assert!(!a.is_singular(&generic));
    }

    #[test]
    fn manipulability_independent_of_base_joint() {
        let a = arm();
        let q = JointVector([0.0, 20.0, -30.0, 40.0, 50.0, 60.0]);
        let w0 = a.manipulability(&q);
        for shift in [37.0, -120.0, 179.0] {
            let mut q2 = q;
            q2.0[0] = shift;
            assert!((a.manipulability(&q2) - w0).abs() <= 1e-9 * w0);
        }
    }

    #[test]
    fn determinant_sign_flips_across_wrist_singularity() {
        let a = arm();
        let at = |q5: f64| a.jacobian_determinant(&JointVector([10.0, 20.0, -30.0, 40.0, q5, 60.0]));
        assert!(at(0.05).signum() != at(-0.05).signum());
    }

    #[test]
    fn model_validation() {
        let a = arm();
        let mut limits = a.limits_deg;
        limits[3] = [10.0, 10.0];
        assert_eq!(ArmModel::new("x", a.rows, limits, 1e-4), Err(ModelError::BadLimits(3)));
        let zero = [DhRow { a: 0.0, alpha: 0.0, d: 0.0, theta_offset: 0.0 }; DOF];
        assert_eq!(ArmModel::new("x", zero, a.limits_deg, 1e-4), Err(ModelError::ZeroReach));
    }

    #[test]
    fn single_precision_model_agrees() {
        let a32 = ArmModel::<f32>::default_arm();
        let p = a32.fk(&JointVector([10.0, 20.0, -30.0, 40.0, 50.0, 60.0]));
        let p64 = arm().fk(&JointVector([10.0, 20.0, -30.0, 40.0, 50.0, 60.0]));
        assert!((p.position.cast::<f64>() - p64.position).norm() < 1e-2);
    }
}
