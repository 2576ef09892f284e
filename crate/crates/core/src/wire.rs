//! Binary position-stream datagrams.
//!
//! ```text
//! header (17 bytes)
//!   0..4   magic "EGM1" (45 47 4D 31)
//!   4      msg type: 1 = COMMAND, 2 = FEEDBACK
//!   5..9   seq, u32 LE
//!   9..17  timestamp_us, u64 LE (sender monotonic clock)
//! COMMAND payload (57 bytes, total 74)
//!   position mm 3 x f64 LE, quaternion w x y z 4 x f64 LE, gripper u8 (0 hold, 1 open, 2 close)
//! FEEDBACK payload (109 bytes, total 126)
//!   joints deg 6 x f64 LE, pose (as above) 7 x f64 LE, state u8 (1 READY, 2 EXECUTING, 3 ERROR),
//!   echo_seq u32 LE
//! ```

use crate::controller::{GripperAction, Mode};
use crate::kinematics::JointVector;
use crate::pose::RobotPose;

pub const MAGIC: [u8; 4] = *b"EGM1";
pub const HEADER_LEN: usize = 17;
pub const COMMAND_LEN: usize = HEADER_LEN + 57;
pub const FEEDBACK_LEN: usize = HEADER_LEN + 109;
/// Quaternion norm slack accepted on the wire.
pub const WIRE_QUAT_TOL: f64 = 1e-6;

const TYPE_COMMAND: u8 = 1;
const TYPE_FEEDBACK: u8 = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncodeError {
    #[error("pose is not finite or its quaternion is not unit")]
    InvalidPose,
    #[error("joint angles are not finite")]
    InvalidJoints,
    #[error("feedback cannot carry state {0:?}")]
    InvalidState(Mode),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("datagram of {got} bytes is shorter than the {need} required")]
    Truncated { got: usize, need: usize },
    #[error("datagram of {got} bytes is longer than the {expected} expected")]
    TrailingBytes { got: usize, expected: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("invalid gripper byte {0}")]
    BadGripper(u8),
    #[error("invalid state byte {0}")]
    BadState(u8),
    #[error("payload pose is not finite or not unit")]
    InvalidPose,
    #[error("joint angles are not finite")]
    InvalidJoints,
}

/// Controller state as carried in feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireState {
    Ready,
    Executing,
    Error,
}

impl WireState {
    pub fn from_mode(mode: Mode) -> Option<Self> {
        match mode {
            Mode::Ready => Some(WireState::Ready),
            Mode::Executing => Some(WireState::Executing),
            Mode::Error => Some(WireState::Error),
            Mode::Disconnected => None,
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            WireState::Ready => Mode::Ready,
            WireState::Executing => Mode::Executing,
            WireState::Error => Mode::Error,
        }
    }

    fn byte(self) -> u8 {
        match self {
            WireState::Ready => 1,
            WireState::Executing => 2,
            WireState::Error => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub seq: u32,
    pub timestamp_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandMsg {
    pub header: Header,
    pub target: RobotPose<f64>,
    pub gripper: Option<GripperAction>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackMsg {
    pub header: Header,
    pub joints: JointVector<f64>,
    pub actual: RobotPose<f64>,
    pub state: WireState,
    pub echo_seq: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    Command(CommandMsg),
    Feedback(FeedbackMsg),
}

impl CommandMsg {
    pub fn to_command(&self) -> crate::controller::Command<f64> {
        crate::controller::Command {
            seq: self.header.seq,
            timestamp_us: self.header.timestamp_us,
            target: self.target,
            gripper: self.gripper,
        }
    }
}

fn pose_ok(p: &RobotPose<f64>) -> bool {
    RobotPose::with_tolerance(p.position_array(), p.wxyz(), WIRE_QUAT_TOL).is_ok()
}

fn put_header(buf: &mut Vec<u8>, ty: u8, h: &Header) {
    buf.extend_from_slice(&MAGIC);
    buf.push(ty);
    buf.extend_from_slice(&h.seq.to_le_bytes());
    buf.extend_from_slice(&h.timestamp_us.to_le_bytes());
}

fn put_pose(buf: &mut Vec<u8>, p: &RobotPose<f64>) {
    for v in p.position_array().into_iter().chain(p.wxyz()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    match msg {
        Message::Command(c) => encode_command(c),
        Message::Feedback(f) => encode_feedback(f),
    }
}

pub fn encode_command(c: &CommandMsg) -> Result<Vec<u8>, EncodeError> {
    if !pose_ok(&c.target) {
        return Err(EncodeError::InvalidPose);
    }
    let mut buf = Vec::with_capacity(COMMAND_LEN);
    put_header(&mut buf, TYPE_COMMAND, &c.header);
    put_pose(&mut buf, &c.target);
    buf.push(match c.gripper {
        None => 0,
        Some(GripperAction::Open) => 1,
        Some(GripperAction::Close) => 2,
    });
    debug_assert_eq!(buf.len(), COMMAND_LEN);
    Ok(buf)
}

pub fn encode_feedback(f: &FeedbackMsg) -> Result<Vec<u8>, EncodeError> {
    if !pose_ok(&f.actual) {
        return Err(EncodeError::InvalidPose);
    }
    if !f.joints.is_finite() {
        return Err(EncodeError::InvalidJoints);
    }
    let mut buf = Vec::with_capacity(FEEDBACK_LEN);
    put_header(&mut buf, TYPE_FEEDBACK, &f.header);
    for v in f.joints.0 {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    put_pose(&mut buf, &f.actual);
    buf.push(f.state.byte());
    buf.extend_from_slice(&f.echo_seq.to_le_bytes());
    debug_assert_eq!(buf.len(), FEEDBACK_LEN);
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.buf[self.at..self.at + N].try_into().expect("length checked up front");
        self.at += N;
        out
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
    fn pose(&mut self) -> Result<RobotPose<f64>, DecodeError> {
        let p = [self.f64(), self.f64(), self.f64()];
        let q = [self.f64(), self.f64(), self.f64(), self.f64()];
        RobotPose::with_tolerance(p, q, WIRE_QUAT_TOL).map_err(|_| DecodeError::InvalidPose)
    }
}

/// Decodes one datagram. Lengths are checked before any field is read.
pub fn decode(buf: &[u8]) -> Result<Message, DecodeError> {
    if buf.len() < HEADER_LEN {
        return Err(DecodeError::Truncated { got: buf.len(), need: HEADER_LEN });
    }
    let magic: [u8; 4] = buf[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    let ty = buf[4];
    let expected = match ty {
        TYPE_COMMAND => COMMAND_LEN,
        TYPE_FEEDBACK => FEEDBACK_LEN,
        other => return Err(DecodeError::UnknownType(other)),
    };
    if buf.len() < expected {
        return Err(DecodeError::Truncated { got: buf.len(), need: expected });
    }
    if buf.len() > expected {
        return Err(DecodeError::TrailingBytes { got: buf.len(), expected });
    }
    let mut r = Reader { buf, at: 5 };
    let header = Header { seq: r.u32(), timestamp_us: r.u64() };
    if ty == TYPE_COMMAND {
        let target = r.pose()?;
        let gripper = match r.u8() {
            0 => None,
            1 => Some(GripperAction::Open),
            2 => Some(GripperAction::Close),
            b => return Err(DecodeError::BadGripper(b)),
        };
        Ok(Message::Command(CommandMsg { header, target, gripper }))
    } else {
        let joints = JointVector(std::array::from_fn(|_| r.f64()));
        if !joints.is_finite() {
            return Err(DecodeError::InvalidJoints);
        }
        let actual = r.pose()?;
        let state = match r.u8() {
            1 => WireState::Ready,
            2 => WireState::Executing,
            3 => WireState::Error,
            b => return Err(DecodeError::BadState(b)),
        };
        let echo_seq = r.u32();
        Ok(Message::Feedback(FeedbackMsg { header, joints, actual, state, echo_seq }))
    }
}

/// Accepts strictly increasing sequence numbers under serial-number
/// arithmetic, so a sender may wrap past `u32::MAX`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeqTracker {
    last: Option<u32>,
}

impl SeqTracker {
    pub fn accept(&mut self, seq: u32) -> bool {
        let newer = match self.last {
            None => true,
            Some(last) => (seq.wrapping_sub(last) as i32) > 0,
        };
        if newer {
            self.last = Some(seq);
        }
        newer
    }

    pub fn last(&self) -> Option<u32> {
        self.last
    }
}
