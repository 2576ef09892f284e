//! Conversions between the AR-side left-handed frame (meters, x right, y up,
//! z forward) and the robot base frame (millimeters, x forward, y left, z up),
//! and the joint-angle mapping used to drive a mirrored virtual arm.
//!
//! The frame relation is a signed 3x3 permutation `P`: `p_robot = 1000 * P * p_ar`.
//! Rotations follow the same basis change, `R_robot = P * R_ar * P^T`. For a
//! quaternion `(w, v)` that is `(w, det(P) * P * v)`, since the rotation axis
//! is a pseudovector and picks up the determinant under an improper map.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::pose::{PoseError, RobotPose, QUAT_NORM_TOL};
use crate::scalar::Real;

const MM_PER_M: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrameError {
    #[error("invalid pose: {0}")]
    InvalidPose(#[from] PoseError),
    #[error("not a signed permutation matrix: {0:?}")]
    BadPermutation([i8; 9]),
}

/// Pose on the AR side: position in meters, unit quaternion, left-handed frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArPose<T: Real> {
    pub position: Vector3<T>,
    pub orientation: UnitQuaternion<T>,
}

impl<T: Real> ArPose<T> {
    pub fn new(position: [T; 3], wxyz: [T; 4]) -> Result<Self, FrameError> {
        // Reuse the robot-side validation; units do not matter for it.
        let p = RobotPose::new(position, wxyz)?;
        Ok(Self { position: p.position, orientation: p.orientation })
    }

    pub fn identity() -> Self {
        Self { position: Vector3::zeros(), orientation: UnitQuaternion::identity() }
    }
}

/// Signed axis permutation relating the AR frame to the robot frame.
///
/// Row-major: `robot[i] = sum_j m[i][j] * ar[j]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[i8; 9]", into = "[i8; 9]")]
pub struct FrameMap {
    m: [i8; 9],
}

impl Default for FrameMap {
    /// `x_r = z_u`, `y_r = -x_u`, `z_r = y_u`: forward and up aligned.
    fn default() -> Self {
        Self { m: [0, 0, 1, -1, 0, 0, 0, 1, 0] }
    }
}

impl TryFrom<[i8; 9]> for FrameMap {
    type Error = FrameError;

    fn try_from(m: [i8; 9]) -> Result<Self, FrameError> {
        let bad = FrameError::BadPermutation(m);
        if m.iter().any(|v| !matches!(v, -1..=1)) {
            return Err(bad);
        }
        for i in 0..3 {
            let row = (0..3).filter(|&j| m[i * 3 + j] != 0).count();
            let col = (0..3).filter(|&j| m[j * 3 + i] != 0).count();
            if row != 1 || col != 1 {
                return Err(bad);
            }
        }
        Ok(Self { m })
    }
}

impl From<FrameMap> for [i8; 9] {
    fn from(f: FrameMap) -> Self {
        f.m
    }
}

impl FrameMap {
    pub fn entries(&self) -> [i8; 9] {
        self.m
    }

    pub fn matrix<T: Real>(&self) -> Matrix3<T> {
        Matrix3::from_row_iterator(self.m.iter().map(|&v| T::lit(v as f64)))
    }

    /// +1 for a proper rotation, -1 when the map flips handedness.
    pub fn determinant(&self) -> i8 {
        let m = self.m;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    pub fn ar_to_robot<T: Real>(&self, p: &ArPose<T>) -> Result<RobotPose<T>, FrameError> {
        check_finite(&p.position, &p.orientation)?;
        let perm = self.matrix::<T>();
        let position = perm * p.position * T::lit(MM_PER_M);
        let orientation = self.map_rotation(&perm, &p.orientation);
        Ok(RobotPose { position, orientation })
    }

    pub fn robot_to_ar<T: Real>(&self, p: &RobotPose<T>) -> Result<ArPose<T>, FrameError> {
        check_finite(&p.position, &p.orientation)?;
        let inv = self.matrix::<T>().transpose();
        let position = inv * p.position / T::lit(MM_PER_M);
        let orientation = self.map_rotation(&inv, &p.orientation);
        Ok(ArPose { position, orientation })
    }

    fn map_rotation<T: Real>(&self, perm: &Matrix3<T>, q: &UnitQuaternion<T>) -> UnitQuaternion<T> {
        let q = q.quaternion();
        let v = perm * q.imag() * T::lit(self.determinant() as f64);
        UnitQuaternion::new_unchecked(Quaternion::from_parts(q.w, v))
    }
}

fn check_finite<T: Real>(p: &Vector3<T>, q: &UnitQuaternion<T>) -> Result<(), FrameError> {
    let q = q.quaternion();
    if p.iter().chain(q.coords.iter()).any(|v| !v.finite()) {
        return Err(PoseError::NonFinite.into());
    }
    let n = q.norm().to_f64_lossy();
    if (n - 1.0).abs() > QUAT_NORM_TOL {
        return Err(PoseError::NotUnit(n).into());
    }
    Ok(())
}

/// Converts with the default frame map.
pub fn ar_to_robot<T: Real>(p: &ArPose<T>) -> Result<RobotPose<T>, FrameError> {
    FrameMap::default().ar_to_robot(p)
}

pub fn robot_to_ar<T: Real>(p: &RobotPose<T>) -> Result<ArPose<T>, FrameError> {
    FrameMap::default().robot_to_ar(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit<T: Real>(self) -> Vector3<T> {
        match self {
            Axis::X => Vector3::x(),
            Axis::Y => Vector3::y(),
            Axis::Z => Vector3::z(),
        }
    }
}

/// Rotation axis of each joint in the mirrored virtual arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointMapSpec {
    pub axes: [Axis; 6],
}

impl Default for JointMapSpec {
    fn default() -> Self {
        use Axis::*;
        Self { axes: [Y, Z, Z, X, Z, X] }
    }
}

/// Local Euler vector for a joint transform: the received angle, sign
/// inverted, placed on the joint's rotation axis.
pub fn joint_map<T: Real>(theta_deg: T, axis: Axis) -> Vector3<T> {
    axis.unit::<T>() * -theta_deg
}

impl JointMapSpec {
    pub fn map<T: Real>(&self, q_deg: &[T; 6]) -> [Vector3<T>; 6] {
        std::array::from_fn(|i| joint_map(q_deg[i], self.axes[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_pose() -> impl Strategy<Value = ArPose<f64>> {
        (
            prop::array::uniform3(-2.0..2.0f64),
            prop::array::uniform4(-1.0..1.0f64).prop_filter("non-degenerate", |q| {
                q.iter().map(|v| v * v).sum::<f64>() > 1e-3
            }),
        )
            .prop_map(|(p, q)| {
                let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
                ArPose { position: Vector3::from(p), orientation: uq }
            })
    }

    #[test]
    fn position_permutation_and_scale() {
        let p = ArPose::new([0.1, 0.2, 0.3], [1.0, 0.0, 0.0, 0.0]).unwrap();
        let r = ar_to_robot(&p).unwrap();
        assert!((r.position - Vector3::new(300.0, -100.0, 200.0)).norm() < 1e-9);
    }

    #[test]
    fn origin_is_fixed() {
        let r = ar_to_robot(&ArPose::<f64>::identity()).unwrap();
        assert_eq!(r.position, Vector3::zeros());
        assert_eq!(r.wxyz(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_rejected() {
        let mut p = ArPose::<f64>::identity();
        p.position.x = f64::INFINITY;
        assert!(matches!(ar_to_robot(&p), Err(FrameError::InvalidPose(PoseError::NonFinite))));
    }

    #[test]
    fn handedness_flips_once() {
        let m = FrameMap::default();
        let perm = m.matrix::<f64>();
        let (ex, ey, ez) = (perm * Vector3::x(), perm * Vector3::y(), perm * Vector3::z());
        let before = Vector3::<f64>::x().dot(&Vector3::y().cross(&Vector3::z()));
        let after = ex.dot(&ey.cross(&ez));
        assert_eq!(before, 1.0);
        assert_eq!(after, -1.0);
        assert_eq!(m.determinant(), -1);
    }

    #[test]
    fn orientation_matches_matrix_basis_change() {
        let m = FrameMap::default();
        let perm = m.matrix::<f64>();
        let q = UnitQuaternion::from_euler_angles(0.3, -0.7, 1.1);
        let p = ArPose { position: Vector3::zeros(), orientation: q };
        let r = m.ar_to_robot(&p).unwrap();
        let expect = perm * q.to_rotation_matrix().matrix() * perm.transpose();
        let got = r.orientation.to_rotation_matrix();
        assert!((got.matrix() - expect).abs().max() < 1e-12);
    }

    #[test]
    fn rejects_bad_permutation() {
        assert!(FrameMap::try_from([1, 0, 0, 1, 0, 0, 0, 0, 1]).is_err());
        assert!(FrameMap::try_from([2, 0, 0, 0, 1, 0, 0, 0, 1]).is_err());
        assert_eq!(FrameMap::try_from([1, 0, 0, 0, 1, 0, 0, 0, 1]).unwrap().determinant(), 1);
    }

    #[test]
    fn joint_map_examples() {
        assert_eq!(joint_map(45.0, Axis::Z), Vector3::new(0.0, 0.0, -45.0));
        assert_eq!(joint_map(30.0, Axis::Y), Vector3::new(0.0, -30.0, 0.0));
        for a in [Axis::X, Axis::Y, Axis::Z] {
            assert_eq!(joint_map(0.0, a), Vector3::zeros());
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(p in arb_pose()) {
            let back = robot_to_ar(&ar_to_robot(&p).unwrap()).unwrap();
            prop_assert!((back.position - p.position).norm() < 1e-9);
            prop_assert!((back.orientation.coords - p.orientation.coords).norm() < 1e-9);
        }

        #[test]
        fn joint_map_is_linear(a in -360.0..360.0f64, b in -360.0..360.0f64, k in 0usize..3) {
            let axis = [Axis::X, Axis::Y, Axis::Z][k];
            let sum = joint_map(a + b, axis);
            let parts = joint_map(a, axis) + joint_map(b, axis);
            prop_assert!((sum - parts).norm() <= 1e-12 * (1.0 + a.abs() + b.abs()));
        }
    }
}
