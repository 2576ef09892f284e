//! Blocking UDP client for the position stream.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use teleop_core::controller::GripperAction;
use teleop_core::wire::{self, CommandMsg, FeedbackMsg, Header, Message};
use teleop_core::RobotPose;

pub struct WireClient {
    socket: UdpSocket,
    seq: u32,
    epoch: Instant,
}

impl WireClient {
    pub fn connect(server: SocketAddr) -> io::Result<Self> {
        let bind: SocketAddr = if server.is_ipv4() { ([0, 0, 0, 0], 0).into() } else { "[::]:0".parse().expect("literal") };
        let socket = UdpSocket::bind(bind)?;
        socket.connect(server)?;
        Ok(Self { socket, seq: 0, epoch: Instant::now() })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    /// Sends a COMMAND and returns its sequence number.
    pub fn send(&mut self, target: &RobotPose, gripper: Option<GripperAction>) -> io::Result<u32> {
        self.seq = self.seq.wrapping_add(1);
        let header = Header { seq: self.seq, timestamp_us: self.epoch.elapsed().as_micros() as u64 };
        let bytes = wire::encode_command(&CommandMsg { header, target: *target, gripper })
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        self.socket.send(&bytes)?;
        Ok(self.seq)
    }

    /// Waits up to `timeout` for a FEEDBACK datagram. Undecodable datagrams are skipped.
    pub fn recv_feedback(&self, timeout: Duration) -> io::Result<Option<FeedbackMsg>> {
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; 512];
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.socket.set_read_timeout(Some(left))?;
            match self.socket.recv(&mut buf) {
                Ok(n) => {
                    if let Ok(Message::Feedback(f)) = wire::decode(&buf[..n]) {
                        return Ok(Some(f));
                    }
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
    }

    /// Every feedback datagram already queued, oldest first.
    pub fn drain_feedback(&self) -> io::Result<Vec<FeedbackMsg>> {
        let mut out = Vec::new();
        self.socket.set_nonblocking(true)?;
        let mut buf = [0u8; 512];
        let r = loop {
            match self.socket.recv(&mut buf) {
                Ok(n) => {
                    if let Ok(Message::Feedback(f)) = wire::decode(&buf[..n]) {
                        out.push(f);
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => break Ok(out),
                Err(e) => break Err(e),
            }
        };
        self.socket.set_nonblocking(false)?;
        r
    }
}
