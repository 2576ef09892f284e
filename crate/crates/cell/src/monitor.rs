//! HTTP monitoring and control service.
//!
//! | method | path | body / reply |
//! |---|---|---|
//! | GET | `/rw/panel/ctrl-state` | `{"state": "init" \| "motoron" \| "motoroff" \| "emergencystop"}` |
//! | GET | `/rw/state` | [`StateView`] |
//! | GET | `/rw/elog/{domain}/{seqnum}` | [`ElogEntry`], 404 if never emitted |
//! | GET | `/subscription` | `{"subscriptions": [{"id", "resources", "created_at_ms"}]}` |
//! | POST | `/subscription` | `{"resources": ["elog/5", "elog/9", "panel/ctrl-state"]}` → 201 `{"id", "resources", "poll"}` |
//! | DELETE | `/subscription/{id}` | 204, or 404 if unknown |
//! | GET | `/poll/{id}` | WebSocket; one JSON text message per event |
//! | POST | `/fault/{code}` | 202 `{"code", "title", "domain", "seqnum"}`, 400 for unknown codes |
//! | POST | `/gripper` | `{"action": "open" \| "close"}` → 200 `{"gripper"}`, 409 in ERROR |
//! | POST | `/control/{connect \| disconnect \| restart}` | 200 `{"mode", "state"}` |
//! | POST | `/relay/target` | [`RelayTarget`] → 202 `{"seq"}`; forwarded as a wire COMMAND |
//! | POST | `/annotate` | `{"tag": "item"}` → 202; tags the next recorded cycle |
//! | GET | `/stream/pointcloud` | WebSocket; binary point-cloud frames, 404 without a camera |
//!
//! Push events are `{"resource": "elog/9", "seqnum": 12}` or
//! `{"resource": "panel/ctrl-state", "state": "motoron"}`. Errors are
//! `{"error": "..."}`.

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use teleop_core::controller::{GripperAction, GripperError, GripperState, Mode};
use teleop_core::fault::ErrorCode;
use teleop_core::frames::{ArPose, FrameMap};
use teleop_core::pose::PoseRecord;
use teleop_core::wire::{self, CommandMsg, Header};
use teleop_core::RobotPose;
use tokio::sync::broadcast;

use crate::hub::{ctrl_state, AttachError, ElogEntry, Resource, SubscriptionInfo};
use crate::runtime::{CellLink, LoopGone};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActiveError {
    pub code: u32,
    pub title: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateView {
    pub mode: Mode,
    pub state: String,
    pub active_error: Option<ActiveError>,
    pub joints_deg: [f64; 6],
    pub pose: PoseRecord,
    pub target: Option<PoseRecord>,
    pub gripper: GripperState,
    pub echo_seq: u32,
    pub cycle: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelayFrame {
    #[default]
    Robot,
    Ar,
}

/// Pose relay body. `robot` poses are in mm; `ar` poses are in metres in the
/// AR frame and are mapped with the configured permutation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelayTarget {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
    #[serde(default)]
    pub frame: RelayFrame,
    #[serde(default)]
    pub gripper: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubscribeBody {
    pub resources: Vec<String>,
}

struct Relay {
    socket: UdpSocket,
    target: SocketAddr,
    seq: AtomicU32,
    epoch: Instant,
}

#[derive(Clone)]
pub struct MonitorState {
    link: CellLink,
    relay: Arc<Relay>,
    frame_map: FrameMap,
    cloud: Option<broadcast::Sender<Arc<Vec<u8>>>>,
}

impl MonitorState {
    /// `wire_addr` is where relayed targets are sent.
    pub fn new(
        link: CellLink,
        wire_addr: SocketAddr,
        frame_map: FrameMap,
        cloud: Option<broadcast::Sender<Arc<Vec<u8>>>>,
    ) -> std::io::Result<Self> {
        let bind: SocketAddr = if wire_addr.is_ipv4() { ([127, 0, 0, 1], 0).into() } else { "[::1]:0".parse().expect("literal") };
        let socket = UdpSocket::bind(bind)?;
        socket.set_nonblocking(true)?;
        let relay = Relay { socket, target: wire_addr, seq: AtomicU32::new(0), epoch: Instant::now() };
        Ok(Self { link, relay: Arc::new(relay), frame_map, cloud })
    }
}

pub fn router(state: MonitorState) -> Router {
    Router::new()
        .route("/rw/panel/ctrl-state", get(get_ctrl_state))
        .route("/rw/state", get(get_state))
        .route("/rw/elog/:domain/:seqnum", get(get_elog))
        .route("/subscription", get(list_subscriptions).post(create_subscription))
        .route("/subscription/:id", delete(delete_subscription))
        .route("/poll/:id", get(poll))
        .route("/fault/:code", post(inject_fault))
        .route("/gripper", post(gripper))
        .route("/control/:op", post(control))
        .route("/relay/target", post(relay_target))
        .route("/annotate", post(annotate))
        .route("/stream/pointcloud", get(stream_pointcloud))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: MonitorState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

fn gone(_: LoopGone) -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "control loop is not running")
}

async fn get_ctrl_state(State(s): State<MonitorState>) -> Json<serde_json::Value> {
    let snap = s.link.snapshot();
    Json(json!({ "state": ctrl_state(snap.mode, snap.active_error) }))
}

async fn get_state(State(s): State<MonitorState>) -> Json<StateView> {
    let snap = s.link.snapshot();
    Json(StateView {
        mode: snap.mode,
        state: ctrl_state(snap.mode, snap.active_error).into(),
        active_error: snap.active_error.map(|c| ActiveError { code: c.code(), title: c.title().into() }),
        joints_deg: snap.joints.0,
        pose: (&snap.pose).into(),
        target: snap.target.as_ref().map(PoseRecord::from),
        gripper: snap.gripper,
        echo_seq: snap.echo_seq,
        cycle: snap.cycle,
    })
}

async fn get_elog(State(s): State<MonitorState>, Path((domain, seqnum)): Path<(String, String)>) -> Response {
    let (Ok(domain), Ok(seqnum)) = (domain.parse::<u8>(), seqnum.parse::<u64>()) else {
        return error(StatusCode::NOT_FOUND, "no such event");
    };
    match s.link.hub().elog(domain, seqnum) {
        Some(entry) => Json::<ElogEntry>(entry).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no event {seqnum} in domain {domain}")),
    }
}

async fn list_subscriptions(State(s): State<MonitorState>) -> Json<serde_json::Value> {
    Json(json!({ "subscriptions": s.link.hub().list() }))
}

async fn create_subscription(State(s): State<MonitorState>, body: Result<Json<SubscribeBody>, JsonRejection>) -> Response {
    let Ok(Json(body)) = body else {
        return error(StatusCode::BAD_REQUEST, "expected {\"resources\": [...]}");
    };
    if body.resources.is_empty() {
        return error(StatusCode::BAD_REQUEST, "no resources requested");
    }
    let mut resources = Vec::new();
    for name in &body.resources {
        match Resource::parse(name) {
            Some(r) if !resources.contains(&r) => resources.push(r),
            Some(_) => {}
            None => return error(StatusCode::BAD_REQUEST, format!("unknown resource {name:?}")),
        }
    }
    let info: SubscriptionInfo = s.link.hub().subscribe(resources);
    let poll = format!("/poll/{}", info.id);
    (StatusCode::CREATED, Json(json!({ "id": info.id, "resources": info.resources, "poll": poll }))).into_response()
}

async fn delete_subscription(State(s): State<MonitorState>, Path(id): Path<String>) -> Response {
    if s.link.hub().unsubscribe(&id) {
        StatusCode::NO_CONTENT.into_response()
    } else {
        error(StatusCode::NOT_FOUND, format!("no subscription {id}"))
    }
}

async fn poll(State(s): State<MonitorState>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Response {
    let mut rx = match s.link.hub().attach(&id) {
        Ok(rx) => rx,
        Err(AttachError::NotFound) => return error(StatusCode::NOT_FOUND, format!("no subscription {id}")),
        Err(AttachError::AlreadyAttached) => return error(StatusCode::CONFLICT, "subscription already has a push channel"),
    };
    ws.on_upgrade(move |mut socket: WebSocket| async move {
        loop {
            tokio::select! {
                ev = rx.recv() => {
                    let Some(ev) = ev else { break };
                    let line = serde_json::to_string(&ev).expect("event serializes");
                    if socket.send(WsMessage::Text(line)).await.is_err() {
                        break;
                    }
                }
                msg = socket.recv() => {
                    match msg {
                        Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => break,
                        Some(Ok(_)) => {}
                    }
                }
            }
        }
        let _ = socket.send(WsMessage::Close(None)).await;
    })
}

async fn inject_fault(State(s): State<MonitorState>, Path(code): Path<String>) -> Response {
    let Some(code) = code.parse::<u32>().ok().and_then(ErrorCode::from_known) else {
        return error(StatusCode::BAD_REQUEST, format!("unknown fault code {code}"));
    };
    match s.link.inject(code).await {
        Ok((domain, seqnum)) => (
            StatusCode::ACCEPTED,
            Json(json!({ "code": code.code(), "title": code.title(), "domain": domain, "seqnum": seqnum })),
        )
            .into_response(),
        Err(e) => gone(e),
    }
}

#[derive(Deserialize)]
struct GripperBody {
    action: String,
}

async fn gripper(State(s): State<MonitorState>, body: Result<Json<GripperBody>, JsonRejection>) -> Response {
    let action = match body.as_ref().map(|b| b.action.as_str()) {
        Ok("open") => GripperAction::Open,
        Ok("close") => GripperAction::Close,
        _ => return error(StatusCode::BAD_REQUEST, "action must be \"open\" or \"close\""),
    };
    match s.link.gripper(action).await {
        Ok(Ok(state)) => Json(json!({ "gripper": state })).into_response(),
        Ok(Err(GripperError::ActiveError(code))) => error(StatusCode::CONFLICT, format!("controller in error: {code}")),
        Ok(Err(GripperError::NotConnected)) => error(StatusCode::CONFLICT, "controller not connected"),
        Err(e) => gone(e),
    }
}

async fn control(State(s): State<MonitorState>, Path(op): Path<String>) -> Response {
    let r = match op.as_str() {
        "connect" => s.link.connect().await,
        "disconnect" => s.link.disconnect().await,
        "restart" => s.link.restart().await,
        _ => return error(StatusCode::NOT_FOUND, format!("unknown control operation {op}")),
    };
    match r {
        Ok(mode) => {
            let snap = s.link.snapshot();
            Json(json!({ "mode": mode, "state": ctrl_state(mode, snap.active_error) })).into_response()
        }
        Err(e) => gone(e),
    }
}

async fn relay_target(State(s): State<MonitorState>, body: Result<Json<RelayTarget>, JsonRejection>) -> Response {
    let Ok(Json(body)) = body else {
        return error(StatusCode::BAD_REQUEST, "expected {\"position\": [x,y,z], \"orientation\": [w,x,y,z]}");
    };
    let target = match body.frame {
        RelayFrame::Robot => RobotPose::new(body.position, body.orientation).map_err(|e| e.to_string()),
        RelayFrame::Ar => ArPose::new(body.position, body.orientation)
            .and_then(|p| s.frame_map.ar_to_robot(&p))
            .map_err(|e| e.to_string()),
    };
    let target = match target {
        Ok(t) => t,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let gripper = match body.gripper.as_deref() {
        None | Some("hold") => None,
        Some("open") => Some(GripperAction::Open),
        Some("close") => Some(GripperAction::Close),
        Some(other) => return error(StatusCode::BAD_REQUEST, format!("unknown gripper action {other:?}")),
    };
    let relay = &s.relay;
    let seq = relay.seq.fetch_add(1, Ordering::Relaxed).wrapping_add(1);
    let header = Header { seq, timestamp_us: relay.epoch.elapsed().as_micros() as u64 };
    let bytes = match wire::encode_command(&CommandMsg { header, target, gripper }) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    match relay.socket.send_to(&bytes, relay.target) {
        Ok(_) => (StatusCode::ACCEPTED, Json(json!({ "seq": seq }))).into_response(),
        Err(e) => error(StatusCode::BAD_GATEWAY, format!("relay send failed: {e}")),
    }
}

#[derive(Deserialize)]
struct AnnotateBody {
    tag: String,
}

async fn annotate(State(s): State<MonitorState>, body: Result<Json<AnnotateBody>, JsonRejection>) -> Response {
    match body {
        Ok(Json(b)) if !b.tag.trim().is_empty() => match s.link.annotate(b.tag) {
            Ok(()) => StatusCode::ACCEPTED.into_response(),
            Err(e) => gone(e),
        },
        _ => error(StatusCode::BAD_REQUEST, "expected {\"tag\": \"...\"}"),
    }
}

async fn stream_pointcloud(State(s): State<MonitorState>, ws: WebSocketUpgrade) -> Response {
    let Some(cloud) = s.cloud.clone() else {
        return error(StatusCode::NOT_FOUND, "no point-cloud source");
    };
    let mut rx = cloud.subscribe();
    ws.on_upgrade(move |mut socket: WebSocket| async move {
        loop {
            tokio::select! {
                frame = rx.recv() => match frame {
                    Ok(bytes) => {
                        if socket.send(WsMessage::Binary(bytes.as_ref().clone())).await.is_err() {
                            break;
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                msg = socket.recv() => match msg {
                    Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => {}
                },
            }
        }
    })
}
