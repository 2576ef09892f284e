#![allow(dead_code)]

use std::net::SocketAddr;
use std::time::{Duration, Instant};

use teleop_cell::client::MonitorClient;
use teleop_cell::monitor::{self, MonitorState};
use teleop_cell::{Cell, CellOptions};
use teleop_core::frames::FrameMap;
use tokio::sync::oneshot;

pub struct Harness {
    pub cell: Option<Cell>,
    pub http: SocketAddr,
    pub wire: SocketAddr,
    pub rt: tokio::runtime::Runtime,
    stop: Option<oneshot::Sender<()>>,
}

impl Harness {
    pub fn start(mut opts: CellOptions) -> Self {
        opts.wire_addr = "127.0.0.1:0".parse().unwrap();
        let cell = Cell::start(opts).expect("cell starts");
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let state = MonitorState::new(cell.link(), cell.wire_addr(), FrameMap::default(), cell.pointcloud()).unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let http = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel::<()>();
        rt.spawn(monitor::serve(listener, state, async move {
            let _ = rx.await;
        }));
        Self { wire: cell.wire_addr(), cell: Some(cell), http, rt, stop: Some(tx) }
    }

    pub fn default() -> Self {
        Self::start(CellOptions::default())
    }

    pub fn client(&self) -> MonitorClient {
        MonitorClient::new(format!("http://{}", self.http))
    }

    pub fn cell(&self) -> &Cell {
        self.cell.as_ref().unwrap()
    }
}

impl Drop for Harness {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(cell) = self.cell.take() {
            cell.shutdown();
        }
    }
}

pub fn wait_for(timeout: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        if cond() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(2));
    }
    cond()
}

/// A `cell run` child process on ephemeral ports.
pub struct Server {
    pub child: std::process::Child,
    pub wire_port: u16,
    pub http_port: u16,
}

impl Server {
    pub fn spawn(extra: &[&str]) -> Self {
        use std::io::BufRead;
        let mut child = std::process::Command::new(env!("CARGO_BIN_EXE_cell"))
            .args(["run", "--wire-port", "0", "--http-port", "0"])
            .args(extra)
            .stdout(std::process::Stdio::piped())
            .stderr(std::process::Stdio::null())
            .spawn()
            .expect("spawn cell run");
        let mut lines = std::io::BufReader::new(child.stdout.take().unwrap()).lines();
        let mut port = |prefix: &str| -> u16 {
            let line = lines.next().expect("server output").unwrap();
            let addr = line.strip_prefix(prefix).unwrap_or_else(|| panic!("unexpected line {line:?}"));
            addr.parse::<SocketAddr>().unwrap().port()
        };
        let wire_port = port("wire listening on ");
        let http_port = port("http listening on ");
        std::thread::spawn(move || for _ in lines {});
        Self { child, wire_port, http_port }
    }

    pub fn wire(&self) -> SocketAddr {
        ([127, 0, 0, 1], self.wire_port).into()
    }

    pub fn client(&self) -> MonitorClient {
        MonitorClient::new(format!("http://127.0.0.1:{}", self.http_port))
    }

    pub fn ports(&self) -> Vec<String> {
        vec!["--wire-port".into(), self.wire_port.to_string(), "--http-port".into(), self.http_port.to_string()]
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn cell(args: &[String]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_cell")).args(args).output().expect("run cell")
}

pub fn args(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}
