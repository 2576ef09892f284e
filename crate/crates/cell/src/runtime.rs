//! The cell runtime: a fixed-rate control loop that owns the controller, a
//! UDP endpoint for the position stream, and optional recorder and camera
//! threads.

use std::collections::VecDeque;
use std::io::BufWriter;
use std::net::{SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc as std_mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use teleop_core::controller::{ControllerEvent, GripperAction, GripperError, GripperState, Mode, Snapshot};
use teleop_core::fault::ErrorCode;
use teleop_core::kinematics::JointVector;
use teleop_core::pointcloud::io::{encode_stream_frame, MAX_STREAM_POINTS};
use teleop_core::pointcloud::synth::{SceneSpec, SynthScene};
use teleop_core::pointcloud::Pipeline;
use teleop_core::session::{SessionHeader, SessionRecord, SessionWriter};
use teleop_core::wire::{self, CommandMsg, FeedbackMsg, Header, Message, WireState};
use teleop_core::{ArmModel, Controller, ControllerConfig, PipelineParams};
use tokio::sync::{broadcast, oneshot};

use crate::hub::{ctrl_state, Hub};

/// Commands waiting for the next tick. Oldest are dropped on overflow.
pub const COMMAND_QUEUE: usize = 64;
/// Upper bound on the point-cloud stream rate.
pub const MAX_STREAM_FPS: f64 = 15.0;

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("port {port} is already in use")]
    PortInUse { port: u16 },
    #[error("cannot bind port {port}: {source}")]
    Bind { port: u16, source: std::io::Error },
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error("cannot create session file {path}: {source}")]
    Record { path: String, source: std::io::Error },
}

pub fn bind_error(port: u16, source: std::io::Error) -> StartError {
    if source.kind() == std::io::ErrorKind::AddrInUse {
        StartError::PortInUse { port }
    } else {
        StartError::Bind { port, source }
    }
}

#[derive(Debug, Clone)]
pub struct CameraOptions {
    pub scene: SceneSpec,
    pub params: PipelineParams,
    pub fps: f64,
}

#[derive(Debug, Clone)]
pub struct CellOptions {
    pub arm: ArmModel,
    pub controller: ControllerConfig,
    pub home: JointVector<f64>,
    pub wire_addr: SocketAddr,
    pub record: Option<PathBuf>,
    pub camera: Option<CameraOptions>,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            arm: ArmModel::default_arm(),
            controller: ControllerConfig::default(),
            home: default_home(),
            wire_addr: SocketAddr::from(([127, 0, 0, 1], 6510)),
            record: None,
            camera: None,
        }
    }
}

/// Start configuration: elbow and wrist bent, clear of the wrist singularity.
pub fn default_home() -> JointVector<f64> {
    JointVector([0.0, 10.0, 20.0, 0.0, 40.0, 0.0])
}

#[derive(Debug, Default)]
pub struct Stats {
    pub cycles: AtomicU64,
    pub overruns: AtomicU64,
    pub datagrams: AtomicU64,
    pub decode_errors: AtomicU64,
    pub queue_dropped: AtomicU64,
    pub applied: AtomicU64,
    pub rejected: AtomicU64,
    pub feedback_sent: AtomicU64,
    pub frames_streamed: AtomicU64,
}

impl Stats {
    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::Relaxed)
    }

    fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }
}

pub(crate) enum Request {
    Connect(oneshot::Sender<Mode>),
    Disconnect(oneshot::Sender<Mode>),
    Restart(oneshot::Sender<Mode>),
    Fault(ErrorCode, oneshot::Sender<(u8, u64)>),
    Gripper(GripperAction, oneshot::Sender<Result<GripperState, GripperError>>),
    Annotate(String),
}

pub struct Shared {
    pub snapshot: RwLock<Snapshot<f64>>,
    pub stats: Stats,
    pub hub: Hub,
}

/// The control loop has stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("control loop is not running")]
pub struct LoopGone;

/// Cloneable handle for talking to a running cell from other threads or tasks.
#[derive(Clone)]
pub struct CellLink {
    requests: std_mpsc::Sender<Request>,
    shared: Arc<Shared>,
}

impl CellLink {
    pub fn snapshot(&self) -> Snapshot<f64> {
        *self.shared.snapshot.read()
    }

    pub fn hub(&self) -> &Hub {
        &self.shared.hub
    }

    pub fn stats(&self) -> &Stats {
        &self.shared.stats
    }

    async fn ask<R>(&self, make: impl FnOnce(oneshot::Sender<R>) -> Request) -> Result<R, LoopGone> {
        let (tx, rx) = oneshot::channel();
        self.requests.send(make(tx)).map_err(|_| LoopGone)?;
        rx.await.map_err(|_| LoopGone)
    }

    pub async fn connect(&self) -> Result<Mode, LoopGone> {
        self.ask(Request::Connect).await
    }

    pub async fn disconnect(&self) -> Result<Mode, LoopGone> {
        self.ask(Request::Disconnect).await
    }

    pub async fn restart(&self) -> Result<Mode, LoopGone> {
        self.ask(Request::Restart).await
    }

    /// Injects a fault; resolves to the event-log domain and seqnum.
    pub async fn inject(&self, code: ErrorCode) -> Result<(u8, u64), LoopGone> {
        self.ask(|tx| Request::Fault(code, tx)).await
    }

    pub async fn gripper(&self, action: GripperAction) -> Result<Result<GripperState, GripperError>, LoopGone> {
        self.ask(|tx| Request::Gripper(action, tx)).await
    }

    /// Tags the next recorded cycle.
    pub fn annotate(&self, tag: String) -> Result<(), LoopGone> {
        self.requests.send(Request::Annotate(tag)).map_err(|_| LoopGone)
    }
}

struct CommandQueue {
    items: Mutex<VecDeque<(CommandMsg, SocketAddr)>>,
}

impl CommandQueue {
    fn push(&self, cmd: CommandMsg, src: SocketAddr, stats: &Stats) {
        let mut q = self.items.lock();
        if q.len() == COMMAND_QUEUE {
            q.pop_front();
            Stats::bump(&stats.queue_dropped);
        }
        q.push_back((cmd, src));
    }

    fn drain(&self) -> Vec<(CommandMsg, SocketAddr)> {
        self.items.lock().drain(..).collect()
    }
}

pub struct Cell {
    link: CellLink,
    wire_addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    cloud: Option<broadcast::Sender<Arc<Vec<u8>>>>,
}

enum RecorderMsg {
    Cycle(SessionRecord),
    Annotate(String),
}

impl Cell {
    pub fn start(opts: CellOptions) -> Result<Self, StartError> {
        let controller = Controller::new(opts.arm.clone(), opts.controller, opts.home)
            .map_err(|e| StartError::Config(e.to_string()))?;
        let socket = UdpSocket::bind(opts.wire_addr).map_err(|e| bind_error(opts.wire_addr.port(), e))?;
        let wire_addr = socket.local_addr().map_err(|e| bind_error(opts.wire_addr.port(), e))?;
        socket
            .set_read_timeout(Some(Duration::from_millis(50)))
            .map_err(|e| bind_error(wire_addr.port(), e))?;

        let shared = Arc::new(Shared { snapshot: RwLock::new(controller.snapshot()), stats: Stats::default(), hub: Hub::new() });
        shared.hub.set_state(ctrl_state(controller.mode(), controller.active_error()));
        let shutdown = Arc::new(AtomicBool::new(false));
        let queue = Arc::new(CommandQueue { items: Mutex::new(VecDeque::with_capacity(COMMAND_QUEUE)) });
        let (req_tx, req_rx) = std_mpsc::channel();
        let mut threads = Vec::new();

        let recorder = match &opts.record {
            Some(path) => {
                let file = std::fs::File::create(path)
                    .map_err(|source| StartError::Record { path: path.display().to_string(), source })?;
                let rate = 1.0 / opts.controller.dt;
                let header = SessionHeader::new(opts.arm.id.clone(), opts.controller.safety, rate);
                let writer = SessionWriter::new(BufWriter::new(file), &header)
                    .map_err(|e| StartError::Record { path: path.display().to_string(), source: std::io::Error::other(e) })?;
                let (tx, rx) = std_mpsc::channel();
                threads.push(std::thread::Builder::new().name("recorder".into()).spawn(move || run_recorder(writer, rx)).expect("spawn recorder"));
                Some(tx)
            }
            None => None,
        };

        {
            let socket = socket.try_clone().map_err(|e| bind_error(wire_addr.port(), e))?;
            let (queue, shared, shutdown) = (queue.clone(), shared.clone(), shutdown.clone());
            threads.push(
                std::thread::Builder::new()
                    .name("wire-rx".into())
                    .spawn(move || run_receiver(socket, &queue, &shared, &shutdown))
                    .expect("spawn receiver"),
            );
        }
        {
            let (shared, shutdown) = (shared.clone(), shutdown.clone());
            let period = Duration::from_secs_f64(opts.controller.dt);
            let mut state = LoopState { controller, peer: None, explicit_disconnect: false, feedback_seq: 0, recorder, pending_fault_acks: Vec::new() };
            threads.push(
                std::thread::Builder::new()
                    .name("control".into())
                    .spawn(move || state.run(socket, &queue, req_rx, &shared, &shutdown, period))
                    .expect("spawn control loop"),
            );
        }

        let cloud = opts.camera.map(|cam| {
            let (tx, _) = broadcast::channel(4);
            let (sender, shared, shutdown) = (tx.clone(), shared.clone(), shutdown.clone());
            threads.push(
                std::thread::Builder::new()
                    .name("camera".into())
                    .spawn(move || run_camera(cam, sender, &shared, &shutdown))
                    .expect("spawn camera"),
            );
            tx
        });

        Ok(Self { link: CellLink { requests: req_tx, shared }, wire_addr, shutdown, threads, cloud })
    }

    pub fn wire_addr(&self) -> SocketAddr {
        self.wire_addr
    }

    pub fn link(&self) -> CellLink {
        self.link.clone()
    }

    /// Encoded point-cloud frames, when a camera is attached.
    pub fn pointcloud(&self) -> Option<broadcast::Sender<Arc<Vec<u8>>>> {
        self.cloud.clone()
    }

    /// Stops all threads and flushes the recording.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Cell {
    fn drop(&mut self) {
        self.stop();
    }
}

struct LoopState {
    controller: Controller,
    peer: Option<SocketAddr>,
    explicit_disconnect: bool,
    feedback_seq: u32,
    recorder: Option<std_mpsc::Sender<RecorderMsg>>,
    pending_fault_acks: Vec<oneshot::Sender<(u8, u64)>>,
}

impl LoopState {
    fn run(
        &mut self,
        socket: UdpSocket,
        queue: &CommandQueue,
        requests: std_mpsc::Receiver<Request>,
        shared: &Shared,
        shutdown: &AtomicBool,
        period: Duration,
    ) {
        let epoch = Instant::now();
        let mut next = epoch + period;
        while !shutdown.load(Ordering::Relaxed) {
            while let Ok(req) = requests.try_recv() {
                self.handle(req, shared);
            }
            for (cmd, src) in queue.drain() {
                self.offer(cmd, src, shared);
            }
            self.controller.step();
            self.publish_events(shared);
            let snap = self.controller.snapshot();
            *shared.snapshot.write() = snap;
            let now_us = epoch.elapsed().as_micros() as u64;
            if snap.mode != Mode::Disconnected {
                self.send_feedback(&socket, &snap, now_us, shared);
                if let Some(rec) = &self.recorder {
                    let target = snap.target.unwrap_or(snap.pose);
                    let _ = rec.send(RecorderMsg::Cycle(SessionRecord::from_snapshot(snap.cycle * period.as_micros() as u64, &target, &snap)));
                }
            }
            Stats::bump(&shared.stats.cycles);

            sleep_until(next);
            let now = Instant::now();
            next += period;
            if now > next {
                Stats::bump(&shared.stats.overruns);
                next = now + period;
            }
        }
    }

    fn offer(&mut self, cmd: CommandMsg, src: SocketAddr, shared: &Shared) {
        if self.peer != Some(src) {
            if self.peer.is_some() {
                self.controller.new_session();
            }
            self.peer = Some(src);
        }
        if self.controller.mode() == Mode::Disconnected && !self.explicit_disconnect {
            self.controller.connect();
        }
        let counter = if self.controller.submit(&cmd.to_command()) { &shared.stats.applied } else { &shared.stats.rejected };
        Stats::bump(counter);
    }

    fn handle(&mut self, req: Request, shared: &Shared) {
        match req {
            Request::Connect(reply) => {
                self.explicit_disconnect = false;
                let m = self.controller.connect();
                self.publish_events(shared);
                let _ = reply.send(m);
            }
            Request::Disconnect(reply) => {
                self.explicit_disconnect = true;
                let m = self.controller.disconnect();
                self.publish_events(shared);
                let _ = reply.send(m);
            }
            Request::Restart(reply) => {
                let m = self.controller.restart();
                self.publish_events(shared);
                let _ = reply.send(m);
            }
            Request::Fault(code, reply) => {
                self.pending_fault_acks.push(reply);
                self.controller.inject_fault(code);
                self.publish_events(shared);
            }
            Request::Gripper(action, reply) => {
                let r = self.controller.gripper_command(action);
                self.publish_events(shared);
                let _ = reply.send(r);
            }
            Request::Annotate(tag) => {
                if let Some(rec) = &self.recorder {
                    let _ = rec.send(RecorderMsg::Annotate(tag));
                }
            }
        }
        *shared.snapshot.write() = self.controller.snapshot();
    }

    fn publish_events(&mut self, shared: &Shared) {
        for ev in self.controller.drain_events() {
            match ev {
                ControllerEvent::Fault(code) => {
                    let logged = shared.hub.log_fault(code);
                    log::info!("fault {code} logged as elog/{}/{}", logged.0, logged.1);
                    if let Some(ack) = self.pending_fault_acks.pop() {
                        let _ = ack.send(logged);
                    }
                }
                ControllerEvent::ModeChanged(m) => log::debug!("mode {m:?}"),
                ControllerEvent::Gripper(g) => log::debug!("gripper {g:?}"),
            }
        }
        shared.hub.set_state(ctrl_state(self.controller.mode(), self.controller.active_error()));
    }

    fn send_feedback(&mut self, socket: &UdpSocket, snap: &Snapshot<f64>, now_us: u64, shared: &Shared) {
        let (Some(peer), Some(state)) = (self.peer, WireState::from_mode(snap.mode)) else { return };
        self.feedback_seq = self.feedback_seq.wrapping_add(1);
        let msg = FeedbackMsg {
            header: Header { seq: self.feedback_seq, timestamp_us: now_us },
            joints: snap.joints,
            actual: snap.pose,
            state,
            echo_seq: snap.echo_seq,
        };
        match wire::encode_feedback(&msg) {
            Ok(bytes) => {
                if socket.send_to(&bytes, peer).is_ok() {
                    Stats::bump(&shared.stats.feedback_sent);
                }
            }
            Err(e) => log::warn!("feedback not encodable: {e}"),
        }
    }
}

/// Sleeps most of the way, then spins for the last fraction of a millisecond.
fn sleep_until(deadline: Instant) {
    const SPIN: Duration = Duration::from_micros(300);
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let left = deadline - now;
        if left > SPIN {
            std::thread::sleep(left - SPIN);
        } else {
            std::hint::spin_loop();
        }
    }
}

fn run_receiver(socket: UdpSocket, queue: &CommandQueue, shared: &Shared, shutdown: &AtomicBool) {
    let mut buf = [0u8; 512];
    while !shutdown.load(Ordering::Relaxed) {
        let (n, src) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => continue,
            Err(e) => {
                log::debug!("wire receive: {e}");
                continue;
            }
        };
        Stats::bump(&shared.stats.datagrams);
        match wire::decode(&buf[..n]) {
            Ok(Message::Command(cmd)) => queue.push(cmd, src, &shared.stats),
            Ok(Message::Feedback(_)) => Stats::bump(&shared.stats.decode_errors),
            Err(e) => {
                log::debug!("dropping datagram from {src}: {e}");
                Stats::bump(&shared.stats.decode_errors);
            }
        }
    }
}

fn run_recorder(mut writer: SessionWriter<BufWriter<std::fs::File>>, rx: std_mpsc::Receiver<RecorderMsg>) {
    for msg in rx {
        let r = match msg {
            RecorderMsg::Cycle(rec) => writer.append(rec),
            RecorderMsg::Annotate(tag) => {
                writer.annotate(tag);
                Ok(())
            }
        };
        if let Err(e) = r {
            log::error!("session recording stopped: {e}");
            return;
        }
    }
    if let Err(e) = writer.finish() {
        log::error!("session flush failed: {e}");
    }
}

fn run_camera(cam: CameraOptions, tx: broadcast::Sender<Arc<Vec<u8>>>, shared: &Shared, shutdown: &AtomicBool) {
    let mut scene = SynthScene::<f64>::new(cam.scene);
    let mut pipeline = match Pipeline::new(cam.params) {
        Ok(p) => p,
        Err(e) => {
            log::error!("point-cloud pipeline disabled: {e}");
            return;
        }
    };
    let period = Duration::from_secs_f64(1.0 / cam.fps.clamp(0.1, MAX_STREAM_FPS));
    let mut next = Instant::now();
    while !shutdown.load(Ordering::Relaxed) {
        if tx.receiver_count() > 0 {
            let Some(frame) = scene.next() else { return };
            match pipeline.process(&frame) {
                Ok(cloud) => {
                    if tx.send(Arc::new(encode_stream_frame(&cloud, MAX_STREAM_POINTS))).is_ok() {
                        Stats::bump(&shared.stats.frames_streamed);
                    }
                }
                Err(e) => log::warn!("frame dropped: {e}"),
            }
        }
        next += period;
        let now = Instant::now();
        if next < now {
            next = now;
        }
        while Instant::now() < next && !shutdown.load(Ordering::Relaxed) {
            std::thread::sleep((next - Instant::now()).min(Duration::from_millis(50)));
        }
    }
}
