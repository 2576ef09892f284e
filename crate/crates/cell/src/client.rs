//! Async client for the monitoring service.

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use regex::Regex;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message as WsMessage;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use crate::hub::{ElogEntry, PushEvent};
use crate::monitor::{RelayTarget, StateView};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{status}: {body}")]
    Status { status: u16, body: String },
    #[error("push channel: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("unexpected reply: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Deserialize)]
pub struct FaultAck {
    pub code: u32,
    pub title: String,
    pub domain: u8,
    pub seqnum: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ControlReply {
    pub mode: teleop_core::controller::Mode,
    pub state: String,
}

#[derive(Clone)]
pub struct MonitorClient {
    base: String,
    http: reqwest::Client,
}

async fn expect(resp: reqwest::Response, want: StatusCode) -> Result<reqwest::Response, ClientError> {
    if resp.status() == want {
        Ok(resp)
    } else {
        let status = resp.status().as_u16();
        Err(ClientError::Status { status, body: resp.text().await.unwrap_or_default() })
    }
}

impl MonitorClient {
    /// `base` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        let http = reqwest::Client::builder().timeout(Duration::from_secs(10)).build().expect("http client");
        Self { base: base.into().trim_end_matches('/').to_string(), http }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub async fn ctrl_state(&self) -> Result<String, ClientError> {
        let resp = expect(self.http.get(self.url("/rw/panel/ctrl-state")).send().await?, StatusCode::OK).await?;
        let v: serde_json::Value = resp.json().await?;
        v["state"].as_str().map(String::from).ok_or_else(|| ClientError::Decode(v.to_string()))
    }

    pub async fn state(&self) -> Result<StateView, ClientError> {
        let resp = expect(self.http.get(self.url("/rw/state")).send().await?, StatusCode::OK).await?;
        Ok(resp.json().await?)
    }

    pub async fn subscribe(&self, resources: &[&str]) -> Result<String, ClientError> {
        let resp = self.http.post(self.url("/subscription")).json(&json!({ "resources": resources })).send().await?;
        let v: serde_json::Value = expect(resp, StatusCode::CREATED).await?.json().await?;
        v["id"].as_str().map(String::from).ok_or_else(|| ClientError::Decode(v.to_string()))
    }

    /// The raw subscription listing.
    pub async fn list_raw(&self) -> Result<String, ClientError> {
        let resp = expect(self.http.get(self.url("/subscription")).send().await?, StatusCode::OK).await?;
        Ok(resp.text().await?)
    }

    /// Subscription ids, extracted from the listing by pattern.
    pub async fn subscription_ids(&self) -> Result<Vec<String>, ClientError> {
        Ok(extract_ids(&self.list_raw().await?))
    }

    /// `true` if deleted, `false` if the subscription was already gone.
    pub async fn unsubscribe(&self, id: &str) -> Result<bool, ClientError> {
        let resp = self.http.delete(self.url(&format!("/subscription/{id}"))).send().await?;
        match resp.status() {
            StatusCode::NO_CONTENT => Ok(true),
            StatusCode::NOT_FOUND => Ok(false),
            _ => Err(expect(resp, StatusCode::NO_CONTENT).await.err().expect("status differs")),
        }
    }

    /// Deletes every listed subscription. Ids that vanish between listing and
    /// deletion count as removed.
    pub async fn cleanup(&self) -> Result<usize, ClientError> {
        let ids = self.subscription_ids().await?;
        for id in &ids {
            if !self.unsubscribe(id).await? {
                log::debug!("subscription {id} already gone");
            }
        }
        Ok(ids.len())
    }

    pub async fn elog(&self, domain: u8, seqnum: u64) -> Result<Option<ElogEntry>, ClientError> {
        let resp = self.http.get(self.url(&format!("/rw/elog/{domain}/{seqnum}"))).send().await?;
        if resp.status() == StatusCode::NOT_FOUND {
            return Ok(None);
        }
        Ok(Some(expect(resp, StatusCode::OK).await?.json().await?))
    }

    pub async fn inject(&self, code: u32) -> Result<FaultAck, ClientError> {
        let resp = self.http.post(self.url(&format!("/fault/{code}"))).send().await?;
        Ok(expect(resp, StatusCode::ACCEPTED).await?.json().await?)
    }

    /// Returns the HTTP status; 200 on success, 409 when the controller refuses.
    pub async fn gripper(&self, action: &str) -> Result<u16, ClientError> {
        let resp = self.http.post(self.url("/gripper")).json(&json!({ "action": action })).send().await?;
        Ok(resp.status().as_u16())
    }

    pub async fn control(&self, op: &str) -> Result<ControlReply, ClientError> {
        let resp = self.http.post(self.url(&format!("/control/{op}"))).send().await?;
        Ok(expect(resp, StatusCode::OK).await?.json().await?)
    }

    pub async fn relay(&self, target: &RelayTarget) -> Result<u32, ClientError> {
        let resp = self.http.post(self.url("/relay/target")).json(target).send().await?;
        let v: serde_json::Value = expect(resp, StatusCode::ACCEPTED).await?.json().await?;
        v["seq"].as_u64().map(|s| s as u32).ok_or_else(|| ClientError::Decode(v.to_string()))
    }

    pub async fn annotate(&self, tag: &str) -> Result<(), ClientError> {
        let resp = self.http.post(self.url("/annotate")).json(&json!({ "tag": tag })).send().await?;
        expect(resp, StatusCode::ACCEPTED).await.map(|_| ())
    }

    fn ws_url(&self, path: &str) -> String {
        let base = self.base.replacen("https://", "wss://", 1).replacen("http://", "ws://", 1);
        format!("{base}{path}")
    }

    pub async fn poll(&self, id: &str) -> Result<PushStream, ClientError> {
        let (ws, _) = tokio_tungstenite::connect_async(self.ws_url(&format!("/poll/{id}"))).await?;
        Ok(PushStream { ws })
    }

    pub async fn pointcloud(&self) -> Result<PointStream, ClientError> {
        let (ws, _) = tokio_tungstenite::connect_async(self.ws_url("/stream/pointcloud")).await?;
        Ok(PointStream { ws })
    }
}

pub fn extract_ids(listing: &str) -> Vec<String> {
    let re = Regex::new(r#""id"\s*:\s*"([^"]+)""#).expect("valid pattern");
    re.captures_iter(listing).map(|c| c[1].to_string()).collect()
}

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub struct PushStream {
    ws: Ws,
}

impl PushStream {
    /// Next event, or `None` on timeout or when the server closed the channel.
    pub async fn next_event(&mut self, timeout: Duration) -> Result<Option<PushEvent>, ClientError> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let msg = match tokio::time::timeout_at(deadline, self.ws.next()).await {
                Err(_) | Ok(None) => return Ok(None),
                Ok(Some(m)) => m?,
            };
            match msg {
                WsMessage::Text(line) => {
                    return serde_json::from_str(&line).map(Some).map_err(|e| ClientError::Decode(format!("{e}: {line}")))
                }
                WsMessage::Close(_) => return Ok(None),
                _ => continue,
            }
        }
    }

    pub async fn close(mut self) {
        let _ = self.ws.send(WsMessage::Close(None)).await;
    }
}

pub struct PointStream {
    ws: Ws,
}

impl PointStream {
    pub async fn next_frame(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, ClientError> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            match tokio::time::timeout_at(deadline, self.ws.next()).await {
                Err(_) | Ok(None) => return Ok(None),
                Ok(Some(m)) => match m? {
                    WsMessage::Binary(b) => return Ok(Some(b)),
                    WsMessage::Close(_) => return Ok(None),
                    _ => continue,
                },
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_from_listing() {
        let listing = r#"{"subscriptions":[{"id":"1ab","resources":["elog/9"]},{"id": "2cd","resources":[]}]}"#;
        assert_eq!(extract_ids(listing), vec!["1ab", "2cd"]);
        assert!(extract_ids(r#"{"subscriptions":[]}"#).is_empty());
    }
}
