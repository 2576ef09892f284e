//! Cartesian TCP pose in the robot base frame.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Allowed deviation of a pose quaternion from unit norm.
pub const QUAT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum PoseError {
    #[error("pose component is not finite")]
    NonFinite,
    #[error("quaternion norm {0} is not unit")]
    NotUnit(f64),
}

/// TCP pose in the right-handed robot base frame (x forward, y left, z up).
///
/// Position is in millimeters; orientation is a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotPose<T: Real> {
    pub position: Vector3<T>,
    pub orientation: UnitQuaternion<T>,
}

impl<T: Real> RobotPose<T> {
    /// Builds a pose from a position (mm) and a `[w, x, y, z]` quaternion.
    pub fn new(position: [T; 3], wxyz: [T; 4]) -> Result<Self, PoseError> {
        Self::with_tolerance(position, wxyz, QUAT_NORM_TOL)
    }

    /// Like [`RobotPose::new`] with a caller supplied norm tolerance. The
    /// quaternion is stored as given, not renormalized.
    pub fn with_tolerance(position: [T; 3], wxyz: [T; 4], tol: f64) -> Result<Self, PoseError> {
        if position.iter().chain(wxyz.iter()).any(|v| !v.finite()) {
            return Err(PoseError::NonFinite);
        }
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm().to_f64_lossy();
        if (norm - 1.0).abs() > tol {
            return Err(PoseError::NotUnit(norm));
        }
        Ok(Self {
            position: Vector3::new(position[0], position[1], position[2]),
            orientation: UnitQuaternion::new_unchecked(q),
        })
    }

    pub fn identity() -> Self {
        Self { position: Vector3::zeros(), orientation: UnitQuaternion::identity() }
    }

    pub fn from_parts(position: Vector3<T>, orientation: UnitQuaternion<T>) -> Self {
        Self { position, orientation }
    }

    pub fn position_array(&self) -> [T; 3] {
        [self.position.x, self.position.y, self.position.z]
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn wxyz(&self) -> [T; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn is_finite(&self) -> bool {
        self.position_array().iter().chain(self.wxyz().iter()).all(|v| v.finite())
    }

    /// Euclidean distance between the two positions (mm).
    pub fn translation_to(&self, other: &Self) -> T {
        (other.position - self.position).norm()
    }

    /// Angle of the relative rotation between the two orientations (rad).
    pub fn rotation_to(&self, other: &Self) -> T {
        self.orientation.angle_to(&other.orientation)
    }

    pub fn cast<U: Real>(&self) -> RobotPose<U> {
        let p = self.position_array();
        let q = self.wxyz();
        let c = |v: T| U::lit(v.to_f64_lossy());
        RobotPose {
            position: Vector3::new(c(p[0]), c(p[1]), c(p[2])),
            orientation: UnitQuaternion::new_unchecked(Quaternion::new(c(q[0]), c(q[1]), c(q[2]), c(q[3]))),
        }
    }
}

impl<T: Real> Default for RobotPose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

/// Plain serialized form of a pose: `{"position":[x,y,z],"orientation":[w,x,y,z]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl From<&RobotPose<f64>> for PoseRecord {
    fn from(p: &RobotPose<f64>) -> Self {
        Self { position: p.position_array(), orientation: p.wxyz() }
    }
}

impl TryFrom<PoseRecord> for RobotPose<f64> {
    type Error = PoseError;

    fn try_from(r: PoseRecord) -> Result<Self, PoseError> {
        // Serialized text loses a few ulps; accept the same slack as the wire.
        RobotPose::with_tolerance(r.position, r.orientation, 1e-6)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_unit_and_non_finite() {
        assert!(matches!(RobotPose::new([0.0, 0.0, 0.0], [2.0, 0.0, 0.0, 0.0]), Err(PoseError::NotUnit(_))));
        assert_eq!(
            RobotPose::new([f64::NAN, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]),
            Err(PoseError::NonFinite)
        );
        assert!(RobotPose::new([1.0, 2.0, 3.0], [1.0, 0.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn record_round_trip() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let p = RobotPose::new([1.5, -2.0, 300.0], [h, 0.0, h, 0.0]).unwrap();
        let back = RobotPose::try_from(PoseRecord::from(&p)).unwrap();
        assert_eq!(p, back);
    }
}
