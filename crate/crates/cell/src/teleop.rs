//! Scripted teleoperation: waypoint streaming, session replay, and
//! client-side recording of the feedback stream.
//!
//! Waypoint files hold one waypoint per line, `#` starts a comment:
//!
//! ```text
//! # x y z [qw qx qy qz] [open|close] [dwell=<s>] [tag=<name>]
//! 550 0 800
//! 550 100 800 close tag=item
//! 600, 100, 750, 0, 0.7071068, 0, 0.7071068 dwell=0.5
//! ```
//!
//! Positions are robot-base millimetres. A waypoint without an orientation
//! keeps the previous one.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{UnitQuaternion, Vector3};
use teleop_core::controller::{GripperAction, GripperState, Mode};
use teleop_core::session::{ReplayStep, SessionError, SessionRecord, SessionWriter};
use teleop_core::wire::FeedbackMsg;
use teleop_core::RobotPose;

use crate::wire_client::WireClient;

#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub position: Vector3<f64>,
    pub orientation: Option<UnitQuaternion<f64>>,
    pub gripper: Option<GripperAction>,
    pub dwell: Duration,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("waypoint line {line}: {reason}")]
pub struct WaypointError {
    pub line: usize,
    pub reason: String,
}

pub fn parse_waypoints(text: &str) -> Result<Vec<Waypoint>, WaypointError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| WaypointError { line: i + 1, reason };
        let mut nums = Vec::new();
        let mut wp = Waypoint { position: Vector3::zeros(), orientation: None, gripper: None, dwell: Duration::ZERO, tags: Vec::new() };
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            if let Ok(v) = tok.parse::<f64>() {
                if wp.gripper.is_some() || !wp.tags.is_empty() || !wp.dwell.is_zero() {
                    return Err(err("numbers must come before keywords".into()));
                }
                nums.push(v);
            } else if tok == "open" {
                wp.gripper = Some(GripperAction::Open);
            } else if tok == "close" {
                wp.gripper = Some(GripperAction::Close);
            } else if let Some(s) = tok.strip_prefix("dwell=") {
                let secs: f64 = s.parse().map_err(|_| err(format!("bad dwell {s:?}")))?;
                if !(secs >= 0.0 && secs.is_finite()) {
                    return Err(err(format!("bad dwell {s:?}")));
                }
                wp.dwell = Duration::from_secs_f64(secs);
            } else if let Some(t) = tok.strip_prefix("tag=") {
                wp.tags.push(t.to_string());
            } else {
                return Err(err(format!("unexpected token {tok:?}")));
            }
        }
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite number".into()));
        }
        match nums.len() {
            3 => {}
            7 => {
                let pose = RobotPose::with_tolerance([nums[0], nums[1], nums[2]], [nums[3], nums[4], nums[5], nums[6]], 1e-4)
                    .map_err(|e| err(e.to_string()))?;
                wp.orientation = Some(pose.orientation);
            }
            n => return Err(err(format!("expected 3 or 7 numbers, got {n}"))),
        }
        wp.position = Vector3::new(nums[0], nums[1], nums[2]);
        out.push(wp);
    }
    Ok(out)
}

/// Records feedback into a session. Each applied sequence number is mapped
/// back to the target and gripper state it carried.
pub struct Recorder<W: Write> {
    writer: SessionWriter<W>,
    sent: BTreeMap<u32, (RobotPose, GripperState)>,
    gripper: GripperState,
    last_t: Option<u64>,
}

impl<W: Write> Recorder<W> {
    pub fn new(writer: SessionWriter<W>) -> Self {
        Self { writer, sent: BTreeMap::new(), gripper: GripperState::Open, last_t: None }
    }

    pub fn sent(&mut self, seq: u32, target: RobotPose, gripper: Option<GripperAction>) {
        if let Some(g) = gripper {
            self.gripper = match g {
                GripperAction::Open => GripperState::Open,
                GripperAction::Close => GripperState::Closed,
            };
        }
        self.sent.insert(seq, (target, self.gripper));
    }

    pub fn annotate(&mut self, tag: &str) {
        self.writer.annotate(tag);
    }

    pub fn feedback(&mut self, fb: &FeedbackMsg) -> Result<(), SessionError> {
        let t = fb.header.timestamp_us;
        if self.last_t.is_some_and(|last| t <= last) {
            return Ok(());
        }
        self.last_t = Some(t);
        let (target, gripper) = self.sent.get(&fb.echo_seq).copied().unwrap_or((fb.actual, GripperState::Open));
        // Older entries can no longer be echoed.
        self.sent = self.sent.split_off(&fb.echo_seq);
        self.writer.append(SessionRecord {
            t_us: t,
            seq: fb.echo_seq,
            target: (&target).into(),
            actual: (&fb.actual).into(),
            joints_deg: fb.joints.0,
            gripper,
            mode: fb.state.mode(),
            annotation: None,
        })
    }

    pub fn records(&self) -> usize {
        self.writer.records_written()
    }

    pub fn finish(self) -> Result<W, SessionError> {
        self.writer.finish()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TeleopError {
    #[error("wire: {0}")]
    Io(#[from] std::io::Error),
    #[error("session: {0}")]
    Session(#[from] SessionError),
    #[error("no feedback from the controller within {0:?}")]
    NoFeedback(Duration),
}

#[derive(Debug, Clone, Copy)]
pub struct StreamOptions {
    /// Streaming rate (Hz).
    pub rate_hz: f64,
    /// Target speed along each segment (mm/s).
    pub speed_mm_s: f64,
    /// Target turn rate along each segment (deg/s).
    pub turn_deg_s: f64,
    /// A waypoint counts as reached when the reported pose is this close (mm).
    pub settle_mm: f64,
    pub settle_timeout: Duration,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self { rate_hz: 250.0, speed_mm_s: 40.0, turn_deg_s: 20.0, settle_mm: 0.05, settle_timeout: Duration::from_secs(10) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Completed,
    /// The controller reported ERROR; streaming stopped.
    Faulted,
    /// A waypoint was not reached within the settle timeout.
    NotSettled,
}

#[derive(Debug, Clone)]
pub struct StreamReport {
    pub outcome: Outcome,
    pub final_pose: Option<RobotPose>,
    pub commands: u32,
    pub elapsed: Duration,
}

struct Streamer<'a, W: Write> {
    wire: &'a mut WireClient,
    recorder: Option<&'a mut Recorder<W>>,
    period: Duration,
    next: Instant,
    last: Option<FeedbackMsg>,
    commands: u32,
}

impl<'a, W: Write> Streamer<'a, W> {
    fn new(wire: &'a mut WireClient, recorder: Option<&'a mut Recorder<W>>, rate_hz: f64) -> Self {
        let period = Duration::from_secs_f64(1.0 / rate_hz);
        Self { wire, recorder, period, next: Instant::now(), last: None, commands: 0 }
    }

    /// Sends one command, paced to the stream rate, then takes in feedback.
    fn send(&mut self, target: &RobotPose, gripper: Option<GripperAction>) -> Result<(), TeleopError> {
        let now = Instant::now();
        if self.next > now {
            std::thread::sleep(self.next - now);
        }
        self.next = self.next.max(now) + self.period;
        self.send_now(target, gripper)
    }

    fn send_now(&mut self, target: &RobotPose, gripper: Option<GripperAction>) -> Result<(), TeleopError> {
        let seq = self.wire.send(target, gripper)?;
        self.commands += 1;
        if let Some(r) = self.recorder.as_deref_mut() {
            r.sent(seq, *target, gripper);
        }
        self.absorb()
    }

    fn absorb(&mut self) -> Result<(), TeleopError> {
        for fb in self.wire.drain_feedback()? {
            if let Some(r) = self.recorder.as_deref_mut() {
                r.feedback(&fb)?;
            }
            self.last = Some(fb);
        }
        Ok(())
    }

    fn faulted(&self) -> bool {
        self.last.is_some_and(|f| f.state.mode() == Mode::Error)
    }

    fn annotate(&mut self, tags: &[String]) {
        if let Some(r) = self.recorder.as_deref_mut() {
            for t in tags {
                r.annotate(t);
            }
        }
    }

    /// Holds `target` until the reported pose is within `tol` of it.
    /// `Completed` means settled.
    fn settle(&mut self, target: &RobotPose, tol: f64, timeout: Duration) -> Result<Outcome, TeleopError> {
        let deadline = Instant::now() + timeout;
        loop {
            self.send(target, None)?;
            if self.faulted() {
                return Ok(Outcome::Faulted);
            }
            if let Some(f) = self.last {
                if f.echo_seq != 0 && f.actual.translation_to(target) <= tol && f.actual.rotation_to(target).to_degrees() < 0.01 {
                    return Ok(Outcome::Completed);
                }
            }
            if Instant::now() > deadline {
                return Ok(Outcome::NotSettled);
            }
        }
    }

    /// Waits for the first feedback after the handshake command.
    fn handshake(&mut self, target: &RobotPose) -> Result<(), TeleopError> {
        let timeout = Duration::from_secs(2);
        let deadline = Instant::now() + timeout;
        while self.last.is_none() {
            if Instant::now() > deadline {
                return Err(TeleopError::NoFeedback(timeout));
            }
            self.send(target, None)?;
            if let Some(fb) = self.wire.recv_feedback(self.period)? {
                if let Some(r) = self.recorder.as_deref_mut() {
                    r.feedback(&fb)?;
                }
                self.last = Some(fb);
            }
        }
        Ok(())
    }
}

/// Streams straight-line segments from `start` through each waypoint.
pub fn run_waypoints<W: Write>(
    wire: &mut WireClient,
    start: RobotPose,
    waypoints: &[Waypoint],
    opts: &StreamOptions,
    recorder: Option<&mut Recorder<W>>,
) -> Result<StreamReport, TeleopError> {
    let began = Instant::now();
    let mut s = Streamer::new(wire, recorder, opts.rate_hz);
    s.handshake(&start)?;
    let step = opts.speed_mm_s / opts.rate_hz;
    let mut current = start;
    let mut outcome = Outcome::Completed;
    'outer: for wp in waypoints {
        let goal = RobotPose::from_parts(wp.position, wp.orientation.unwrap_or(current.orientation));
        let dist = current.translation_to(&goal);
        let angle = current.rotation_to(&goal);
        let turn = opts.turn_deg_s / opts.rate_hz;
        let n = ((dist / step).ceil() as usize).max((angle.to_degrees() / turn).ceil() as usize).max(1);
        for k in 1..=n {
            let f = k as f64 / n as f64;
            let p = current.position + (goal.position - current.position) * f;
            let q = current.orientation.slerp(&goal.orientation, f);
            s.send(&RobotPose::from_parts(p, q), None)?;
            if s.faulted() {
                outcome = Outcome::Faulted;
                break 'outer;
            }
        }
        current = goal;
        if wp.gripper.is_some() {
            s.send(&current, wp.gripper)?;
        }
        match s.settle(&current, opts.settle_mm, opts.settle_timeout)? {
            Outcome::Completed => {}
            other => {
                outcome = other;
                break;
            }
        }
        let dwell_end = Instant::now() + wp.dwell;
        while Instant::now() < dwell_end {
            s.send(&current, None)?;
        }
        s.annotate(&wp.tags);
    }
    if outcome == Outcome::Completed {
        // One more cycle so the tags land on a record.
        s.send(&current, None)?;
        std::thread::sleep(s.period * 2);
        s.absorb()?;
    }
    Ok(StreamReport { outcome, final_pose: s.last.map(|f| f.actual), commands: s.commands, elapsed: began.elapsed() })
}

/// Re-emits a recorded target stream with its original timing scaled by the
/// schedule. `elapsed` covers the schedule only; settling afterwards is not counted.
pub fn run_replay<W: Write>(
    wire: &mut WireClient,
    steps: &[ReplayStep],
    opts: &StreamOptions,
    recorder: Option<&mut Recorder<W>>,
) -> Result<StreamReport, TeleopError> {
    let mut s = Streamer::new(wire, recorder, opts.rate_hz);
    let began = Instant::now();
    let mut gripper: Option<GripperState> = None;
    let mut outcome = Outcome::Completed;
    for step in steps {
        let due = began + step.offset;
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
        let action = (gripper != Some(step.gripper)).then_some(match step.gripper {
            GripperState::Open => GripperAction::Open,
            GripperState::Closed => GripperAction::Close,
        });
        gripper = Some(step.gripper);
        s.send_now(&step.target, action)?;
        if s.faulted() {
            outcome = Outcome::Faulted;
            break;
        }
    }
    let elapsed = began.elapsed();
    if outcome == Outcome::Completed {
        if let Some(last) = steps.last() {
            s.next = Instant::now();
            outcome = s.settle(&last.target, opts.settle_mm, opts.settle_timeout)?;
        }
    }
    Ok(StreamReport { outcome, final_pose: s.last.map(|f| f.actual), commands: s.commands, elapsed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waypoint_parsing() {
        let text = "# square\n550 0 800\n550, 100, 800 close tag=item\n600 100 750 0 0.7071068 0 0.7071068 dwell=0.5 # corner\n";
        let w = parse_waypoints(text).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[1].gripper, Some(GripperAction::Close));
        assert_eq!(w[1].tags, vec!["item"]);
        assert!(w[2].orientation.is_some());
        assert_eq!(w[2].dwell, Duration::from_millis(500));
    }

    #[test]
    fn waypoint_errors() {
        assert_eq!(parse_waypoints("1 2\n").unwrap_err().line, 1);
        assert!(parse_waypoints("\n1 2 3 grab\n").unwrap_err().reason.contains("grab"));
        assert!(parse_waypoints("1 2 3 1 1 1 1\n").is_err());
        assert!(parse_waypoints("1 2 3 close 4\n").is_err());
        assert!(parse_waypoints("1 2 3 dwell=-1\n").is_err());
    }
}
