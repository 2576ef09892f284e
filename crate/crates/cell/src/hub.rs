//! Event log and subscription table behind the monitoring service.
//!
//! Push events carry only a resource name and either a seqnum (event logs)
//! or a state (panel). Error details are fetched separately by seqnum.

use std::collections::HashMap;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use teleop_core::controller::Mode;
use teleop_core::fault::ErrorCode;
use tokio::sync::mpsc;

/// Per-subscription push queue. A subscriber that lets it fill up is dropped.
pub const PUSH_QUEUE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resource {
    #[serde(rename = "panel/ctrl-state")]
    CtrlState,
    #[serde(rename = "elog/5")]
    Elog5,
    #[serde(rename = "elog/9")]
    Elog9,
}

impl Resource {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "panel/ctrl-state" => Some(Resource::CtrlState),
            "elog/5" => Some(Resource::Elog5),
            "elog/9" => Some(Resource::Elog9),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Resource::CtrlState => "panel/ctrl-state",
            Resource::Elog5 => "elog/5",
            Resource::Elog9 => "elog/9",
        }
    }

    pub fn elog(domain: u8) -> Option<Self> {
        match domain {
            5 => Some(Resource::Elog5),
            9 => Some(Resource::Elog9),
            _ => None,
        }
    }
}

/// Panel state text for a controller mode.
pub fn ctrl_state(mode: Mode, active_error: Option<ErrorCode>) -> &'static str {
    match (mode, active_error) {
        (Mode::Disconnected, _) => "init",
        (Mode::Ready | Mode::Executing, _) => "motoron",
        (Mode::Error, Some(ErrorCode::EmergencyStop)) => "emergencystop",
        (Mode::Error, _) => "motoroff",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PushEvent {
    Elog { resource: String, seqnum: u64 },
    State { resource: String, state: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElogEntry {
    pub domain: u8,
    pub seqnum: u64,
    pub code: u32,
    pub title: String,
    pub description: String,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscriptionInfo {
    pub id: String,
    pub resources: Vec<Resource>,
    pub created_at_ms: u64,
}

struct Subscription {
    info: SubscriptionInfo,
    tx: Option<mpsc::Sender<PushEvent>>,
    rx: Option<mpsc::Receiver<PushEvent>>,
}

#[derive(Default)]
struct Inner {
    subs: HashMap<String, Subscription>,
    elog: HashMap<u8, Vec<ElogEntry>>,
    next_seq: HashMap<u8, u64>,
    next_sub: u64,
    last_state: Option<&'static str>,
}

#[derive(Default)]
pub struct Hub {
    inner: Mutex<Inner>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttachError {
    NotFound,
    AlreadyAttached,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl Hub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&self, resources: Vec<Resource>) -> SubscriptionInfo {
        let (tx, rx) = mpsc::channel(PUSH_QUEUE);
        let mut g = self.inner.lock();
        g.next_sub += 1;
        let id = format!("{:x}{:08x}", g.next_sub, rand::random::<u32>());
        let info = SubscriptionInfo { id: id.clone(), resources, created_at_ms: now_ms() };
        g.subs.insert(id, Subscription { info: info.clone(), tx: Some(tx), rx: Some(rx) });
        info
    }

    pub fn list(&self) -> Vec<SubscriptionInfo> {
        let g = self.inner.lock();
        let mut out: Vec<_> = g.subs.values().map(|s| s.info.clone()).collect();
        out.sort_by(|a, b| a.created_at_ms.cmp(&b.created_at_ms).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn unsubscribe(&self, id: &str) -> bool {
        self.inner.lock().subs.remove(id).is_some()
    }

    /// Hands out the push queue of a subscription. Each queue can be taken once.
    pub fn attach(&self, id: &str) -> Result<mpsc::Receiver<PushEvent>, AttachError> {
        let mut g = self.inner.lock();
        let sub = g.subs.get_mut(id).ok_or(AttachError::NotFound)?;
        sub.rx.take().ok_or(AttachError::AlreadyAttached)
    }

    /// Appends an event-log entry and notifies subscribers. Returns the
    /// domain and the new seqnum.
    pub fn log_fault(&self, code: ErrorCode) -> (u8, u64) {
        let domain = code.domain();
        let mut g = self.inner.lock();
        let seq = g.next_seq.entry(domain).or_insert(0);
        *seq += 1;
        let seqnum = *seq;
        g.elog.entry(domain).or_default().push(ElogEntry {
            domain,
            seqnum,
            code: code.code(),
            title: code.title().into(),
            description: code.description().into(),
            timestamp_ms: now_ms(),
        });
        let resource = Resource::elog(domain).expect("domain is 5 or 9");
        fan_out(&mut g, resource, PushEvent::Elog { resource: resource.name().into(), seqnum });
        (domain, seqnum)
    }

    /// Notifies panel subscribers when the state text changes.
    pub fn set_state(&self, state: &'static str) {
        let mut g = self.inner.lock();
        if g.last_state == Some(state) {
            return;
        }
        g.last_state = Some(state);
        let r = Resource::CtrlState;
        fan_out(&mut g, r, PushEvent::State { resource: r.name().into(), state: state.into() });
    }

    pub fn elog(&self, domain: u8, seqnum: u64) -> Option<ElogEntry> {
        let g = self.inner.lock();
        let entries = g.elog.get(&domain)?;
        entries.binary_search_by_key(&seqnum, |e| e.seqnum).ok().map(|i| entries[i].clone())
    }

    pub fn live_count(&self) -> usize {
        self.inner.lock().subs.len()
    }
}

fn fan_out(g: &mut Inner, resource: Resource, event: PushEvent) {
    for sub in g.subs.values_mut() {
        if !sub.info.resources.contains(&resource) {
            continue;
        }
        let Some(tx) = &sub.tx else { continue };
        match tx.try_send(event.clone()) {
            Ok(()) => {}
            Err(mpsc::error::TrySendError::Full(_)) => {
                log::warn!("subscription {} is not draining its queue, dropping its push channel", sub.info.id);
                sub.tx = None;
            }
            Err(mpsc::error::TrySendError::Closed(_)) => sub.tx = None,
        }
    }
}
