use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use teleop_cell::client::MonitorClient;
use teleop_cell::monitor::{self, MonitorState};
use teleop_cell::runtime::{bind_error, default_home, CameraOptions, StartError, MAX_STREAM_FPS};
use teleop_cell::teleop::{parse_waypoints, run_replay, run_waypoints, Outcome, Recorder, StreamOptions};
use teleop_cell::wire_client::WireClient;
use teleop_cell::{Cell, CellOptions};
use teleop_core::analysis::{cohens_d, parse_summary_pair, sus_score, task_metrics, welch_t, SusResponse};
use teleop_core::config::CellConfig;
use teleop_core::fault::ErrorCode;
use teleop_core::pointcloud::synth::SceneSpec;
use teleop_core::session::{replay_schedule, ReadWarning, SessionFile, SessionHeader, SessionWriter};
use teleop_core::RobotPose;

/// Simulated teleoperation cell.
#[derive(Parser)]
#[command(name = "cell", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for randomized components.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the controller, the wire endpoint and the monitoring service.
    Run {
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long)]
        wire_port: Option<u16>,
        #[arg(long)]
        http_port: Option<u16>,
        /// Synthetic depth scene for the point-cloud stream, e.g. `plane:600,noise:5,dropout:0.05`.
        #[arg(long)]
        synth_scene: Option<String>,
        #[arg(long, default_value_t = MAX_STREAM_FPS)]
        stream_fps: f64,
        /// Record every control cycle to this session file.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Stream a waypoint file to a running cell.
    Teleop {
        waypoints: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        wire_port: Option<u16>,
        #[arg(long)]
        http_port: Option<u16>,
        /// Segment speed (mm/s).
        #[arg(long, default_value_t = 40.0)]
        speed: f64,
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Inject a fault code into a running cell.
    Fault {
        code: u32,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        http_port: Option<u16>,
    },
    /// Replay a recorded session's targets into a running cell.
    Replay {
        session: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        wire_port: Option<u16>,
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Offline analysis.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
}

#[derive(Subcommand)]
enum Analyze {
    /// SUS score per response line, then the mean.
    Sus { responses: PathBuf },
    /// Welch t-test and Cohen's d from two `[label,]mean,sd,n` lines.
    Compare { summary: PathBuf },
    /// Task metrics from an annotated session.
    Metrics {
        session: PathBuf,
        #[arg(long, default_value_t = 180.0)]
        limit_s: f64,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<StartError> for Failure {
    fn from(e: StartError) -> Self {
        match e {
            StartError::PortInUse { .. } | StartError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("cell: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("cell: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let config = match &cli.config {
        Some(p) => CellConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => CellConfig::default(),
    };
    match cli.command {
        Command::Run { bind, wire_port, http_port, synth_scene, stream_fps, record } => {
            let scene = synth_scene
                .map(|s| SceneSpec::parse(&s).map_err(|e| Failure::Usage(format!("--synth-scene: {e}"))))
                .transpose()?
                .map(|mut s| {
                    if let Some(seed) = cli.seed {
                        s.seed = seed;
                    }
                    s
                });
            run(&config, bind, wire_port.unwrap_or(config.wire.port), http_port.unwrap_or(config.http.port), scene, stream_fps, record)
        }
        Command::Teleop { waypoints, host, wire_port, http_port, speed, record } => teleop(
            &config,
            &waypoints,
            SocketAddr::new(host, wire_port.unwrap_or(config.wire.port)),
            SocketAddr::new(host, http_port.unwrap_or(config.http.port)),
            speed,
            record.as_deref(),
        ),
        Command::Fault { code, host, http_port } => fault(code, SocketAddr::new(host, http_port.unwrap_or(config.http.port))),
        Command::Replay { session, speed, host, wire_port, record } => {
            replay(&config, &session, speed, SocketAddr::new(host, wire_port.unwrap_or(config.wire.port)), record.as_deref())
        }
        Command::Analyze { what } => analyze(what),
    }
}

fn tokio_rt() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().map_err(runtime)
}

fn run(
    config: &CellConfig,
    bind: IpAddr,
    wire_port: u16,
    http_port: u16,
    scene: Option<SceneSpec>,
    stream_fps: f64,
    record: Option<PathBuf>,
) -> Result<(), Failure> {
    let http = std::net::TcpListener::bind(SocketAddr::new(bind, http_port)).map_err(|e| bind_error(http_port, e))?;
    http.set_nonblocking(true).map_err(runtime)?;
    let http_addr = http.local_addr().map_err(runtime)?;
    let opts = CellOptions {
        arm: config.arm_model().map_err(|e| Failure::Usage(e.to_string()))?,
        controller: config.controller_config().map_err(|e| Failure::Usage(e.to_string()))?,
        home: default_home(),
        wire_addr: SocketAddr::new(bind, wire_port),
        record,
        camera: scene.map(|scene| CameraOptions {
            scene,
            params: config.pipeline_params().expect("validated on load"),
            fps: stream_fps,
        }),
    };
    let cell = Cell::start(opts)?;
    let state = MonitorState::new(cell.link(), cell.wire_addr(), config.frame.permutation, cell.pointcloud()).map_err(runtime)?;
    println!("wire listening on {}", cell.wire_addr());
    println!("http listening on {http_addr}");
    if cell.pointcloud().is_some() {
        println!("point-cloud stream at ws://{http_addr}/stream/pointcloud");
    }
    let rt = tokio_rt()?;
    let served = rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(http)?;
        monitor::serve(listener, state, shutdown_signal()).await
    });
    cell.shutdown();
    served.map_err(runtime)
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

fn session_recorder(config: &CellConfig, path: &Path) -> Result<Recorder<std::io::BufWriter<std::fs::File>>, Failure> {
    let file = std::fs::File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let cc = config.controller_config().map_err(|e| Failure::Usage(e.to_string()))?;
    let header = SessionHeader::new(config.kinematics.model_id.clone(), cc.safety, config.wire.rate_hz);
    Ok(Recorder::new(SessionWriter::new(std::io::BufWriter::new(file), &header).map_err(runtime)?))
}

fn teleop(
    config: &CellConfig,
    waypoints: &Path,
    wire: SocketAddr,
    http: SocketAddr,
    speed: f64,
    record: Option<&Path>,
) -> Result<(), Failure> {
    let text = std::fs::read_to_string(waypoints).map_err(|e| Failure::Usage(format!("{}: {e}", waypoints.display())))?;
    let points = parse_waypoints(&text).map_err(|e| Failure::Usage(e.to_string()))?;
    if points.is_empty() {
        return Err(Failure::Usage("waypoint file is empty".into()));
    }
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Failure::Usage("--speed must be positive".into()));
    }
    let client = MonitorClient::new(format!("http://{http}"));
    let state = tokio_rt()?.block_on(client.state()).map_err(runtime)?;
    let start = RobotPose::try_from(state.pose).map_err(runtime)?;
    let mut wire = WireClient::connect(wire).map_err(runtime)?;
    let mut recorder = record.map(|p| session_recorder(config, p)).transpose()?;
    let opts = StreamOptions { speed_mm_s: speed, ..StreamOptions::default() };
    let report = run_waypoints(&mut wire, start, &points, &opts, recorder.as_mut()).map_err(runtime)?;
    if let (Some(r), Some(path)) = (recorder, record) {
        let n = r.records();
        r.finish().map_err(runtime)?;
        println!("recorded {n} cycles to {}", path.display());
    }
    let last = points.last().expect("non-empty");
    if let Some(p) = report.final_pose {
        println!(
            "final pose {:.3} {:.3} {:.3} mm, {:.3} mm from the last waypoint",
            p.position.x,
            p.position.y,
            p.position.z,
            (p.position - last.position).norm()
        );
    }
    match report.outcome {
        Outcome::Completed => Ok(()),
        Outcome::Faulted => Err(runtime("controller reported ERROR; streaming stopped")),
        Outcome::NotSettled => Err(runtime("waypoint not reached within the settle timeout")),
    }
}

fn fault(code: u32, http: SocketAddr) -> Result<(), Failure> {
    if ErrorCode::from_known(code).is_none() {
        let known: Vec<String> = ErrorCode::KNOWN.iter().map(|c| c.code().to_string()).collect();
        return Err(Failure::Usage(format!("unknown fault code {code}; known codes: {}", known.join(", "))));
    }
    let client = MonitorClient::new(format!("http://{http}"));
    tokio_rt()?.block_on(async {
        let ack = client.inject(code).await.map_err(runtime)?;
        println!("{} ({}) logged as elog/{}/{}", ack.title, ack.code, ack.domain, ack.seqnum);
        println!("ctrl-state {}", client.ctrl_state().await.map_err(runtime)?);
        Ok(())
    })
}

fn read_session(path: &Path) -> Result<SessionFile, Failure> {
    let (file, warning) = SessionFile::read_path(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    if let Some(ReadWarning::TruncatedTail { line }) = warning {
        eprintln!("cell: warning: {} line {line} is incomplete and was skipped", path.display());
    }
    Ok(file)
}

fn replay(config: &CellConfig, session: &Path, speed: f64, wire: SocketAddr, record: Option<&Path>) -> Result<(), Failure> {
    let file = read_session(session)?;
    let steps = replay_schedule(&file, speed).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut wire = WireClient::connect(wire).map_err(runtime)?;
    let mut recorder = record.map(|p| session_recorder(config, p)).transpose()?;
    let report = run_replay(&mut wire, &steps, &StreamOptions::default(), recorder.as_mut()).map_err(runtime)?;
    if let Some(r) = recorder {
        r.finish().map_err(runtime)?;
    }
    println!(
        "replayed {} targets in {:.3} s (recorded {:.3} s, speed {speed})",
        steps.len(),
        report.elapsed.as_secs_f64(),
        file.duration().as_secs_f64()
    );
    if let (Some(p), Some(recorded)) = (report.final_pose, file.final_pose()) {
        println!("final pose differs from the recording by {:.3} mm", p.translation_to(&recorded));
    }
    match report.outcome {
        Outcome::Completed => Ok(()),
        Outcome::Faulted => Err(runtime("controller reported ERROR during replay")),
        Outcome::NotSettled => Err(runtime("final target not reached within the settle timeout")),
    }
}

fn analyze(what: Analyze) -> Result<(), Failure> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())));
    match what {
        Analyze::Sus { responses } => {
            let rs = SusResponse::parse_lines(&read(&responses)?).map_err(runtime)?;
            if rs.is_empty() {
                return Err(runtime("no responses"));
            }
            let scores: Vec<f64> = rs.iter().map(sus_score).collect();
            for (i, s) in scores.iter().enumerate() {
                println!("{}\t{s:.1}", i + 1);
            }
            println!("mean\t{:.2}", scores.iter().sum::<f64>() / scores.len() as f64);
        }
        Analyze::Compare { summary } => {
            let [(la, a), (lb, b)] = parse_summary_pair(&read(&summary)?).map_err(runtime)?;
            let w = welch_t(&a, &b).map_err(runtime)?;
            let d = cohens_d(a.mean, a.sd, b.mean, b.sd).map_err(runtime)?;
            println!("{la} vs {lb}");
            println!("t\t{:.3}", w.t);
            println!("df\t{:.2}", w.df);
            println!("d\t{d:.3}");
        }
        Analyze::Metrics { session, limit_s } => {
            let file = read_session(&session)?;
            let m = task_metrics(&file.records, limit_s);
            println!("n_max\t{}", m.n_max);
            println!("e_minor\t{}", m.e_minor);
            println!("e_major\t{}", m.e_major);
        }
    }
    Ok(())
}

