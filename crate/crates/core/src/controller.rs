//! Simulated arm controller fed by a position stream.
//!
//! Each cycle the latest target is smoothed by a first-order low-pass filter,
//! the step from the current setpoint is clamped in translation and rotation,
//! and the clamped pose is solved with IK. Failures become faults; the
//! controller never returns an error from `step`.

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::fault::ErrorCode;
use crate::kinematics::{ArmModel, IkError, JointVector};
use crate::pose::RobotPose;
use crate::scalar::Real;
use crate::wire::SeqTracker;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Disconnected,
    Ready,
    Executing,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GripperState {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GripperAction {
    Open,
    Close,
}

impl GripperAction {
    fn resulting(self) -> GripperState {
        match self {
            GripperAction::Open => GripperState::Open,
            GripperAction::Close => GripperState::Closed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum GripperError {
    #[error("controller has an active error: {0}")]
    ActiveError(ErrorCode),
    #[error("controller is not connected")]
    NotConnected,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyConfig<T> {
    /// Cartesian translation speed bound (mm/s).
    pub max_speed_deviation: T,
    /// Low-pass cutoff frequency (Hz).
    pub lp_cutoff_hz: T,
    /// Orientation rate bound (deg/s).
    pub max_orient_rate: T,
    /// Target speed, as a multiple of `max_speed_deviation`, that counts as gross over-command.
    pub speed_violation_factor: T,
    /// How long gross over-command must last before faulting (ms).
    pub speed_violation_ms: T,
}

impl<T: Real> Default for SafetyConfig<T> {
    fn default() -> Self {
        Self {
            max_speed_deviation: T::lit(50.0),
            lp_cutoff_hz: T::lit(100.0),
            max_orient_rate: T::lit(25.0),
            speed_violation_factor: T::lit(4.0),
            speed_violation_ms: T::lit(250.0),
        }
    }
}

impl<T: Real> SafetyConfig<T> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            (self.max_speed_deviation, "max_speed_deviation"),
            (self.lp_cutoff_hz, "lp_cutoff_hz"),
            (self.max_orient_rate, "max_orient_rate"),
            (self.speed_violation_factor, "speed_violation_factor"),
            (self.speed_violation_ms, "speed_violation_ms"),
        ];
        for (v, name) in fields {
            if !(v > T::zero()) {
                return Err(ConfigError::NotPositive(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig<T> {
    pub safety: SafetyConfig<T>,
    /// Control period (s).
    pub dt: T,
    /// Command silence after which the controller stops tracking and holds (s).
    pub hold_timeout: T,
}

impl<T: Real> Default for ControllerConfig<T> {
    fn default() -> Self {
        Self { safety: SafetyConfig::default(), dt: T::lit(0.004), hold_timeout: T::lit(0.5) }
    }
}

impl<T: Real> ControllerConfig<T> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.safety.validate()?;
        if !(self.dt > T::zero()) {
            return Err(ConfigError::NotPositive("dt"));
        }
        if !(self.hold_timeout > T::zero()) {
            return Err(ConfigError::NotPositive("hold_timeout"));
        }
        Ok(())
    }
}

/// Smoothing factor of the discrete first-order low-pass: `dt / (RC + dt)`, `RC = 1 / (2 pi fc)`.
pub fn lp_alpha<T: Real>(dt: T, cutoff_hz: T) -> T {
    let rc = T::one() / (T::two_pi() * cutoff_hz);
    dt / (rc + dt)
}

/// One IIR update `y + alpha (x - y)`.
#[inline]
pub fn lp_step<T: Real>(y: T, x: T, alpha: T) -> T {
    y + alpha * (x - y)
}

/// Low-pass update of a pose: per translation axis, and on the angle of the
/// rotation from the previous output to the raw target.
pub fn lp_filter<T: Real>(prev: &RobotPose<T>, raw: &RobotPose<T>, alpha: T) -> RobotPose<T> {
    let position = prev.position.zip_map(&raw.position, |y, x| lp_step(y, x, alpha));
    let orientation = rotate_toward(&prev.orientation, &raw.orientation, alpha);
    RobotPose::from_parts(position, orientation)
}

/// Rotates `from` toward `to` by `fraction` of their relative angle.
fn rotate_toward<T: Real>(from: &UnitQuaternion<T>, to: &UnitQuaternion<T>, fraction: T) -> UnitQuaternion<T> {
    if fraction >= T::one() {
        return *to;
    }
    let rel = from.inverse() * to;
    from * UnitQuaternion::from_scaled_axis(rel.scaled_axis() * fraction)
}

/// A decoded position-stream command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command<T: Real> {
    pub seq: u32,
    pub timestamp_us: u64,
    pub target: RobotPose<T>,
    pub gripper: Option<GripperAction>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerEvent {
    ModeChanged(Mode),
    Fault(ErrorCode),
    Gripper(GripperState),
}

/// Immutable copy of the controller state, handed to feedback and monitoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot<T: Real> {
    pub cycle: u64,
    pub mode: Mode,
    pub active_error: Option<ErrorCode>,
    pub joints: JointVector<T>,
    pub pose: RobotPose<T>,
    pub target: Option<RobotPose<T>>,
    pub gripper: GripperState,
    pub echo_seq: u32,
}

#[derive(Debug, Clone)]
pub struct Controller<T: Real> {
    model: ArmModel<T>,
    config: ControllerConfig<T>,
    alpha: T,
    mode: Mode,
    active_error: Option<ErrorCode>,
    joints: JointVector<T>,
    pose: RobotPose<T>,
    filtered: RobotPose<T>,
    target: Option<RobotPose<T>>,
    gripper: GripperState,
    cycle: u64,
    seq: SeqTracker,
    last_command_cycle: Option<u64>,
    last_sample: Option<(RobotPose<T>, u64)>,
    overspeed_since: Option<u64>,
    det_sign: T,
    events: Vec<ControllerEvent>,
}

impl<T: Real> Controller<T> {
    pub fn new(model: ArmModel<T>, config: ControllerConfig<T>, home: JointVector<T>) -> Result<Self, ConfigError> {
        config.validate()?;
        let pose = model.fk(&home);
        let det_sign = model.jacobian_determinant(&home).signum();
        Ok(Self {
            alpha: lp_alpha(config.dt, config.safety.lp_cutoff_hz),
            model,
            config,
            mode: Mode::Disconnected,
            active_error: None,
            joints: home,
            pose,
            filtered: pose,
            target: None,
            gripper: GripperState::Open,
            cycle: 0,
            seq: SeqTracker::default(),
            last_command_cycle: None,
            last_sample: None,
            overspeed_since: None,
            det_sign,
            events: Vec::new(),
        })
    }

    pub fn model(&self) -> &ArmModel<T> {
        &self.model
    }

    pub fn config(&self) -> &ControllerConfig<T> {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn active_error(&self) -> Option<ErrorCode> {
        self.active_error
    }

    pub fn pose(&self) -> &RobotPose<T> {
        &self.pose
    }

    pub fn joints(&self) -> &JointVector<T> {
        &self.joints
    }

    pub fn gripper(&self) -> GripperState {
        self.gripper
    }

    pub fn filter_alpha(&self) -> T {
        self.alpha
    }

    pub fn snapshot(&self) -> Snapshot<T> {
        Snapshot {
            cycle: self.cycle,
            mode: self.mode,
            active_error: self.active_error,
            joints: self.joints,
            pose: self.pose,
            target: self.target,
            gripper: self.gripper,
            echo_seq: self.seq.last().unwrap_or(0),
        }
    }

    /// Events produced since the last call.
    pub fn drain_events(&mut self) -> Vec<ControllerEvent> {
        std::mem::take(&mut self.events)
    }

    fn set_mode(&mut self, mode: Mode) {
        if self.mode != mode {
            self.mode = mode;
            self.events.push(ControllerEvent::ModeChanged(mode));
        }
    }

    fn reset_tracking(&mut self) {
        self.filtered = self.pose;
        self.target = None;
        self.last_command_cycle = None;
        self.last_sample = None;
        self.overspeed_since = None;
        self.det_sign = self.model.jacobian_determinant(&self.joints).signum();
    }

    /// DISCONNECTED -> READY. Idempotent once connected.
    pub fn connect(&mut self) -> Mode {
        if self.mode == Mode::Disconnected {
            self.reset_tracking();
            self.seq = SeqTracker::default();
            self.set_mode(Mode::Ready);
        }
        self.mode
    }

    /// Starts a new command session: sequence tracking restarts and the
    /// filter is reseeded at the current pose. The mode is unchanged.
    pub fn new_session(&mut self) {
        self.seq = SeqTracker::default();
        self.reset_tracking();
    }

    pub fn disconnect(&mut self) -> Mode {
        self.active_error = None;
        self.reset_tracking();
        self.set_mode(Mode::Disconnected);
        self.mode
    }

    /// Clears an active error. Outside ERROR this changes nothing.
    pub fn restart(&mut self) -> Mode {
        if self.mode == Mode::Error {
            self.active_error = None;
            self.reset_tracking();
            self.set_mode(Mode::Ready);
        }
        self.mode
    }

    pub fn inject_fault(&mut self, code: ErrorCode) {
        self.fault(code);
    }

    fn fault(&mut self, code: ErrorCode) {
        self.active_error = Some(code);
        self.target = None;
        self.overspeed_since = None;
        self.events.push(ControllerEvent::Fault(code));
        self.set_mode(Mode::Error);
    }

    pub fn gripper_command(&mut self, action: GripperAction) -> Result<GripperState, GripperError> {
        match self.mode {
            Mode::Error => Err(GripperError::ActiveError(self.active_error.unwrap_or(ErrorCode::Unknown))),
            Mode::Disconnected => Err(GripperError::NotConnected),
            Mode::Ready | Mode::Executing => {
                let next = action.resulting();
                if next != self.gripper {
                    self.gripper = next;
                    self.events.push(ControllerEvent::Gripper(next));
                }
                Ok(self.gripper)
            }
        }
    }

    /// Offers a streamed command. Returns whether it was applied; stale
    /// sequence numbers and commands outside READY/EXECUTING are dropped.
    pub fn submit(&mut self, cmd: &Command<T>) -> bool {
        if !matches!(self.mode, Mode::Ready | Mode::Executing) || !cmd.target.is_finite() {
            return false;
        }
        if !self.seq.accept(cmd.seq) {
            return false;
        }
        self.track_speed(cmd);
        self.target = Some(cmd.target);
        self.last_command_cycle = Some(self.cycle);
        if let Some(action) = cmd.gripper {
            // Mode checked above, cannot fail.
            let _ = self.gripper_command(action);
        }
        true
    }

    fn track_speed(&mut self, cmd: &Command<T>) {
        if let Some((prev, t_prev)) = self.last_sample {
            if cmd.timestamp_us > t_prev {
                let dt = T::lit((cmd.timestamp_us - t_prev) as f64 * 1e-6);
                let speed = prev.translation_to(&cmd.target) / dt;
                let limit = self.config.safety.max_speed_deviation * self.config.safety.speed_violation_factor;
                if speed > limit {
                    self.overspeed_since.get_or_insert(self.cycle);
                } else {
                    self.overspeed_since = None;
                }
            }
        }
        self.last_sample = Some((cmd.target, cmd.timestamp_us));
    }

    /// Advances one control period.
    pub fn step(&mut self) {
        self.cycle += 1;
        if !matches!(self.mode, Mode::Ready | Mode::Executing) {
            return;
        }
        let dt = self.config.dt;

        if let Some(since) = self.overspeed_since {
            let elapsed_ms = T::lit((self.cycle - since) as f64) * dt * T::lit(1000.0);
            if elapsed_ms > self.config.safety.speed_violation_ms {
                self.fault(ErrorCode::SpeedViolation);
                return;
            }
        }

        if let Some(last) = self.last_command_cycle {
            let silent = T::lit((self.cycle - last) as f64) * dt;
            if silent > self.config.hold_timeout {
                // Hold the current setpoint.
                self.reset_tracking();
            }
        }

        let raw = self.target.unwrap_or(self.pose);
        self.filtered = lp_filter(&self.filtered, &raw, self.alpha);

        let next = self.clamped_step(&self.filtered);
        if next != self.pose {
            match self.model.ik(&next, &self.joints) {
                Ok(q) => {
                    let det = self.model.jacobian_determinant(&q);
                    let crossed = self.det_sign != T::zero() && det.signum() != self.det_sign;
                    if self.model.manipulability(&q) < self.model.w_min || crossed {
                        self.fault(ErrorCode::ProximityToSingularity);
                        return;
                    }
                    self.det_sign = det.signum();
                    self.joints = q;
                    self.pose = next;
                }
                Err(e) => {
                    self.fault(ik_fault(&e));
                    return;
                }
            }
        }

        let mode = if self.target.is_some() { Mode::Executing } else { Mode::Ready };
        self.set_mode(mode);
    }

    fn clamped_step(&self, goal: &RobotPose<T>) -> RobotPose<T> {
        let safety = &self.config.safety;
        let dt = self.config.dt;
        let max_move = safety.max_speed_deviation * dt;
        let mut delta = goal.position - self.pose.position;
        let dist = delta.norm();
        if dist > max_move {
            delta *= max_move / dist;
        }
        let max_turn = (safety.max_orient_rate * dt).to_radians_real();
        let angle = self.pose.rotation_to(goal);
        let fraction = if angle > max_turn { max_turn / angle } else { T::one() };
        RobotPose::from_parts(self.pose.position + delta, rotate_toward(&self.pose.orientation, &goal.orientation, fraction))
    }
}

trait DegExt: Real {
    fn to_radians_real(self) -> Self {
        self * Self::pi() / Self::lit(180.0)
    }
}
impl<T: Real> DegExt for T {}

/// Fault raised for an IK failure.
pub fn ik_fault(e: &IkError) -> ErrorCode {
    match e {
        IkError::JointLimit { .. } | IkError::Unreachable { .. } => ErrorCode::JointOutOfRange,
        IkError::NoConvergence { .. } => ErrorCode::ProximityToSingularity,
        IkError::NonFinite => ErrorCode::Unknown,
    }
}
