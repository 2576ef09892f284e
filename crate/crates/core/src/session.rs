//! Demonstration session files.
//!
//! A session is line-delimited JSON (extension `.demo.jsonl`): one header line
//! followed by one record per control cycle.
//!
//! ```text
//! {"schema":"teleop-session","version":1,"arm_model":"desk6r-v1","rate_hz":250.0,"started_at_ms":...,"safety":{...}}
//! {"t_us":4000,"seq":1,"target":{"position":[..],"orientation":[w,x,y,z]},"actual":{..},"joints_deg":[..6],"gripper":"open","mode":"executing"}
//! {"t_us":8000,...,"annotation":"item"}
//! ```

use std::io::{BufRead, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::controller::{Command, Controller, GripperState, Mode, SafetyConfig, Snapshot};
use crate::pose::{PoseRecord, RobotPose};

pub const SCHEMA: &str = "teleop-session";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "demo.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionHeader {
    pub schema: String,
    pub version: u32,
    pub arm_model: String,
    pub rate_hz: f64,
    pub started_at_ms: u64,
    pub safety: SafetyConfig<f64>,
}

impl SessionHeader {
    pub fn new(arm_model: impl Into<String>, safety: SafetyConfig<f64>, rate_hz: f64) -> Self {
        let started_at_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self { schema: SCHEMA.into(), version: VERSION, arm_model: arm_model.into(), rate_hz, started_at_ms, safety }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub t_us: u64,
    pub seq: u32,
    pub target: PoseRecord,
    pub actual: PoseRecord,
    pub joints_deg: [f64; 6],
    pub gripper: GripperState,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
}

impl SessionRecord {
    pub fn from_snapshot(t_us: u64, target: &RobotPose<f64>, snap: &Snapshot<f64>) -> Self {
        Self {
            t_us,
            seq: snap.echo_seq,
            target: target.into(),
            actual: (&snap.pose).into(),
            joints_deg: snap.joints.0,
            gripper: snap.gripper,
            mode: snap.mode,
            annotation: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported session schema: {0}")]
    UnsupportedSchema(String),
    #[error("corrupt record on line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("record time {got} us does not advance past {prev} us")]
    NonMonotonic { prev: u64, got: u64 },
    #[error("replay speed factor must be positive and finite")]
    BadSpeed,
    #[error("session has no records")]
    Empty,
}

/// Append-only writer; the header is written on creation.
pub struct SessionWriter<W: Write> {
    out: W,
    last_t: Option<u64>,
    pending: Vec<String>,
    count: usize,
}

impl<W: Write> SessionWriter<W> {
    pub fn new(mut out: W, header: &SessionHeader) -> Result<Self, SessionError> {
        serde_json::to_writer(&mut out, header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        Ok(Self { out, last_t: None, pending: Vec::new(), count: 0 })
    }

    /// Tags the next appended record. Several tags before one record are joined with `;`.
    pub fn annotate(&mut self, tag: impl Into<String>) {
        self.pending.push(tag.into());
    }

    pub fn append(&mut self, mut record: SessionRecord) -> Result<(), SessionError> {
        if let Some(prev) = self.last_t {
            if record.t_us <= prev {
                return Err(SessionError::NonMonotonic { prev, got: record.t_us });
            }
        }
        if !self.pending.is_empty() {
            let mut tags = std::mem::take(&mut self.pending);
            tags.extend(record.annotation.take());
            record.annotation = Some(tags.join(";"));
        }
        serde_json::to_writer(&mut self.out, &record).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.last_t = Some(record.t_us);
        self.count += 1;
        Ok(())
    }

    pub fn records_written(&self) -> usize {
        self.count
    }

    pub fn flush(&mut self) -> Result<(), SessionError> {
        self.out.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, SessionError> {
        self.flush()?;
        Ok(self.out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionFile {
    pub header: SessionHeader,
    pub records: Vec<SessionRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadWarning {
    /// The last line was incomplete and was dropped.
    TruncatedTail { line: usize },
}

impl SessionFile {
    /// Parses a session. An unparseable final line is reported as a warning
    /// and dropped; a bad line anywhere else is an error.
    pub fn read<R: BufRead>(input: R) -> Result<(Self, Option<ReadWarning>), SessionError> {
        let mut lines = input.lines().enumerate().peekable();
        let header_line = match lines.next() {
            Some((_, l)) => l?,
            None => return Err(SessionError::UnsupportedSchema("empty file".into())),
        };
        let header: SessionHeader = serde_json::from_str(&header_line)
            .map_err(|e| SessionError::UnsupportedSchema(format!("unreadable header: {e}")))?;
        if header.schema != SCHEMA || header.version != VERSION {
            return Err(SessionError::UnsupportedSchema(format!("{} v{}", header.schema, header.version)));
        }

        let mut records = Vec::new();
        let mut warning = None;
        while let Some((idx, line)) = lines.next() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<SessionRecord>(&line) {
                Ok(r) => records.push(r),
                Err(e) => {
                    let is_last = lines.peek().is_none();
                    if is_last {
                        log::warn!("session line {} incomplete, dropped", idx + 1);
                        warning = Some(ReadWarning::TruncatedTail { line: idx + 1 });
                    } else {
                        return Err(SessionError::Corrupt { line: idx + 1, reason: e.to_string() });
                    }
                }
            }
        }
        Ok((Self { header, records }, warning))
    }

    pub fn read_path(path: &std::path::Path) -> Result<(Self, Option<ReadWarning>), SessionError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn duration(&self) -> Duration {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => Duration::from_micros(b.t_us - a.t_us),
            _ => Duration::ZERO,
        }
    }

    pub fn final_pose(&self) -> Option<RobotPose<f64>> {
        self.records.last().and_then(|r| RobotPose::try_from(r.actual).ok())
    }
}

/// One target to emit during replay, at `offset` from replay start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayStep {
    pub offset: Duration,
    pub target: RobotPose<f64>,
    pub gripper: GripperState,
}

/// Replay timeline: original inter-record timing divided by `speed`.
pub fn replay_schedule(file: &SessionFile, speed: f64) -> Result<Vec<ReplayStep>, SessionError> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(SessionError::BadSpeed);
    }
    let t0 = file.records.first().ok_or(SessionError::Empty)?.t_us;
    file.records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let target = RobotPose::try_from(r.target)
                .map_err(|e| SessionError::Corrupt { line: i + 2, reason: e.to_string() })?;
            let offset = Duration::from_secs_f64((r.t_us - t0) as f64 * 1e-6 / speed);
            Ok(ReplayStep { offset, target, gripper: r.gripper })
        })
        .collect()
}

/// Feeds the recorded targets into `controller`, one per cycle, and returns
/// the resulting state trace. The controller must already be connected.
pub fn replay_offline(file: &SessionFile, controller: &mut Controller<f64>) -> Result<Vec<Snapshot<f64>>, SessionError> {
    let steps = replay_schedule(file, 1.0)?;
    let mut trace = Vec::with_capacity(steps.len());
    for (i, step) in steps.iter().enumerate() {
        let cmd = Command {
            seq: i as u32 + 1,
            timestamp_us: step.offset.as_micros() as u64,
            target: step.target,
            gripper: Some(match step.gripper {
                GripperState::Open => crate::controller::GripperAction::Open,
                GripperState::Closed => crate::controller::GripperAction::Close,
            }),
        };
        controller.submit(&cmd);
        controller.step();
        trace.push(controller.snapshot());
    }
    Ok(trace)
}
