//! Caption relay server.
//!
//! Speakers stream audio into a session; the session's pipeline turns each
//! utterance into a caption that is broadcast to every viewer of that session
//! in ingestion order. Viewers steer the session configuration and submit
//! corrections, which land in the data store.

mod client;
mod connection;
mod transport;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::{mpsc, watch};

pub use client::Client;

use crate::latency::{savings, RateConstants};
use crate::pipeline::{caption_latency, Emission, Pipeline, PipelineError, SessionConfig, SessionRunner};
use crate::protocol::{code, kind, CaptionFinal, ErrorPayload, Metrics};
use crate::text::word_count;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerSettings {
    pub heartbeat_interval_ms: u64,
    /// Consecutive silent heartbeat intervals tolerated before disconnecting.
    pub missed_heartbeats: u32,
    /// Outbound queue length per connection.
    pub viewer_buffer: usize,
    pub rates: RateConstants,
    pub default_session: SessionConfig,
}

impl Default for ServerSettings {
    fn default() -> Self {
        Self {
            heartbeat_interval_ms: 5_000,
            missed_heartbeats: 2,
            viewer_buffer: 256,
            rates: RateConstants::default(),
            default_session: SessionConfig::default(),
        }
    }
}

impl ServerSettings {
    pub fn heartbeat_interval(&self) -> Duration {
        Duration::from_millis(self.heartbeat_interval_ms.max(1))
    }
}

/// A message queued for one connection; the writer stamps `seq`.
#[derive(Debug, Clone)]
pub(crate) struct Outgoing {
    pub kind: &'static str,
    pub session_id: Arc<str>,
    pub payload: Arc<Value>,
}

/// Handle on a live connection's outbound side.
#[derive(Clone)]
pub(crate) struct Peer {
    pub id: u64,
    pub tx: mpsc::Sender<Outgoing>,
    pub kill: Arc<watch::Sender<Option<ErrorPayload>>>,
}

impl Peer {
    /// Queues without blocking. A full queue disconnects the peer with a
    /// `backpressure` error.
    fn offer(&self, out: Outgoing) -> bool {
        match self.tx.try_send(out) {
            Ok(()) => true,
            Err(mpsc::error::TrySendError::Full(_)) => {
                self.kill.send_replace(Some(ErrorPayload::new(
                    code::BACKPRESSURE,
                    "outbound queue full; viewer is not keeping up",
                )));
                false
            }
            Err(mpsc::error::TrySendError::Closed(_)) => false,
        }
    }
}

#[derive(Debug, Default)]
struct MetricsAcc {
    captions: u64,
    failures: u64,
    skipped: u64,
    asr_s: f64,
    translate_s: f64,
    summarize_s: f64,
    sigma: f64,
    savings_s: f64,
}

pub(crate) struct Session {
    pub id: Arc<str>,
    pub runner: Arc<SessionRunner>,
    viewers: Mutex<Vec<Peer>>,
    origins: Mutex<HashMap<u64, Peer>>,
    records: Mutex<HashMap<u64, u64>>,
    metrics: Mutex<MetricsAcc>,
    rates: RateConstants,
}

impl Session {
    fn create(
        id: &str,
        pipeline: Arc<Pipeline>,
        config: SessionConfig,
        rates: RateConstants,
    ) -> Result<Arc<Self>, PipelineError> {
        config.validate()?;
        Ok(Arc::new_cyclic(|weak: &Weak<Session>| {
            let weak = weak.clone();
            let runner = SessionRunner::new(id, pipeline, config, move |emission| {
                if let Some(session) = weak.upgrade() {
                    session.emit(emission);
                }
            })
            .expect("config validated above");
            Session {
                id: Arc::from(id),
                runner: Arc::new(runner),
                viewers: Mutex::new(Vec::new()),
                origins: Mutex::new(HashMap::new()),
                records: Mutex::new(HashMap::new()),
                metrics: Mutex::new(MetricsAcc::default()),
                rates,
            }
        }))
    }

    pub fn outgoing(&self, kind: &'static str, payload: impl Serialize) -> Outgoing {
        Outgoing {
            kind,
            session_id: self.id.clone(),
            payload: Arc::new(serde_json::to_value(payload).expect("payload serializes")),
        }
    }

    pub fn add_viewer(&self, peer: Peer) {
        self.viewers.lock().unwrap().push(peer);
    }

    pub fn viewer_count(&self) -> usize {
        self.viewers.lock().unwrap().len()
    }

    pub fn remove_peer(&self, peer_id: u64) {
        self.viewers.lock().unwrap().retain(|p| p.id != peer_id);
        self.origins.lock().unwrap().retain(|_, p| p.id != peer_id);
    }

    pub fn register_origin(&self, utterance_id: u64, peer: Peer) {
        self.origins.lock().unwrap().insert(utterance_id, peer);
    }

    pub fn record_for(&self, utterance_id: u64) -> Option<u64> {
        self.records.lock().unwrap().get(&utterance_id).copied()
    }

    /// Sends to every viewer without blocking; viewers that cannot keep up
    /// are dropped from the session.
    pub fn broadcast(&self, out: Outgoing) {
        self.viewers.lock().unwrap().retain(|p| p.offer(out.clone()));
    }

    pub fn metrics(&self) -> Metrics {
        let m = self.metrics.lock().unwrap();
        let per = |x: f64| if m.captions == 0 { 0.0 } else { x / m.captions as f64 };
        Metrics {
            captions: m.captions,
            failures: m.failures,
            skipped: m.skipped,
            mean_asr_s: per(m.asr_s),
            mean_translate_s: per(m.translate_s),
            mean_summarize_s: per(m.summarize_s),
            mean_sigma: per(m.sigma),
            total_savings_s: m.savings_s,
            viewers: self.viewer_count(),
        }
    }

    fn reply_origin(&self, utterance_id: u64, error: ErrorPayload) {
        let origin = self.origins.lock().unwrap().remove(&utterance_id);
        if let Some(peer) = origin {
            peer.offer(self.outgoing(kind::ERROR, error));
        }
    }

    /// Called by the session runner, in ingestion order.
    fn emit(&self, emission: Emission) {
        match emission {
            Emission::Caption { caption, config } => {
                self.origins.lock().unwrap().remove(&caption.utterance_id);
                let latency = match caption_latency(&caption, &config, &self.rates) {
                    Ok(l) => l,
                    Err(e) => {
                        tracing::error!(
                            utterance_id = caption.utterance_id,
                            "latency model rejected caption: {e}"
                        );
                        return;
                    }
                };
                let savings_s = savings(
                    word_count(&caption.source_text) as f64,
                    caption.sigma_measured,
                    &self.rates,
                )
                .unwrap_or(0.0);
                if let Some(record_id) = caption.record_id {
                    self.records.lock().unwrap().insert(caption.utterance_id, record_id);
                }
                {
                    let mut m = self.metrics.lock().unwrap();
                    m.captions += 1;
                    m.asr_s += caption.stage_latencies.asr_s;
                    m.translate_s += caption.stage_latencies.translate_s;
                    m.summarize_s += caption.stage_latencies.summarize_s;
                    m.sigma += caption.sigma_measured;
                    m.savings_s += savings_s;
                }
                let frame = self.outgoing(
                    kind::CAPTION_FINAL,
                    CaptionFinal {
                        caption,
                        latency,
                        savings_s,
                    },
                );
                self.broadcast(frame);
            }
            Emission::Skipped { utterance_id } => {
                self.metrics.lock().unwrap().skipped += 1;
                let mut err = ErrorPayload::new(code::SKIPPED, "empty transcript; no caption produced");
                err.utterance_id = Some(utterance_id);
                self.reply_origin(utterance_id, err);
            }
            Emission::Failed { utterance_id, error } => {
                self.metrics.lock().unwrap().failures += 1;
                let code = match &error {
                    PipelineError::StageFailed { .. } => code::STAGE_FAILED,
                    PipelineError::Store(_) => code::STORE,
                    _ => code::CONFIG,
                };
                let mut err = ErrorPayload::new(code, error.to_string());
                err.stage = error.stage();
                err.utterance_id = Some(utterance_id);
                self.reply_origin(utterance_id, err);
            }
        }
    }
}

/// Shared state of one server instance.
pub struct ServerState {
    pipeline: Arc<Pipeline>,
    settings: ServerSettings,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    next_peer: AtomicU64,
    next_session: AtomicU64,
}

impl ServerState {
    pub fn settings(&self) -> &ServerSettings {
        &self.settings
    }

    pub fn pipeline(&self) -> &Arc<Pipeline> {
        &self.pipeline
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.sessions.lock().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Metrics of a live session.
    pub fn session_metrics(&self, session_id: &str) -> Option<Metrics> {
        self.sessions.lock().unwrap().get(session_id).map(|s| s.metrics())
    }

    pub(crate) fn next_peer_id(&self) -> u64 {
        self.next_peer.fetch_add(1, Ordering::Relaxed) + 1
    }

    /// Returns the named session, creating it from the default configuration
    /// (patched by `configure`) when it does not exist. An empty name gets a
    /// fresh generated id.
    pub(crate) fn session(
        &self,
        requested_id: &str,
        configure: impl FnOnce(&mut SessionConfig),
    ) -> Result<(Arc<Session>, bool), PipelineError> {
        let mut sessions = self.sessions.lock().unwrap();
        let id = if requested_id.is_empty() {
            format!("session-{}", self.next_session.fetch_add(1, Ordering::Relaxed) + 1)
        } else {
            requested_id.to_owned()
        };
        if let Some(existing) = sessions.get(&id) {
            return Ok((existing.clone(), false));
        }
        let mut config = self.settings.default_session.clone();
        configure(&mut config);
        let session = Session::create(&id, self.pipeline.clone(), config, self.settings.rates)?;
        sessions.insert(id, session.clone());
        Ok((session, true))
    }
}

/// Binds listeners and accepts connections on the current tokio runtime.
#[derive(Clone)]
pub struct Server {
    state: Arc<ServerState>,
}

impl Server {
    pub fn new(pipeline: Arc<Pipeline>, settings: ServerSettings) -> Self {
        Self {
            state: Arc::new(ServerState {
                pipeline,
                settings,
                sessions: Mutex::new(HashMap::new()),
                next_peer: AtomicU64::new(0),
                next_session: AtomicU64::new(0),
            }),
        }
    }

    pub fn state(&self) -> &Arc<ServerState> {
        &self.state
    }

    /// Starts accepting length-prefixed frames on `addr`.
    pub async fn listen_tcp(&self, addr: &str) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
        transport::listen_tcp(self.state.clone(), addr).await
    }

    /// Starts accepting WebSocket text frames on `addr`.
    pub async fn listen_ws(&self, addr: &str) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
        transport::listen_ws(self.state.clone(), addr).await
    }
}
