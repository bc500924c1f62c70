use std::sync::Arc;

use serde::Serialize;
use tokio::sync::{mpsc, watch};
use tokio::time::{interval_at, Instant, MissedTickBehavior};

use super::{Outgoing, Peer, ServerState, Session};
use crate::pipeline::{JobInput, SessionConfigPatch};
use crate::protocol::{
    code, kind, AudioPayload, ClientKind, ConfigAck, CorrectionAck, CorrectionPayload, ErrorPayload, Frame, Hello,
    ProtocolError, SetDisplayMode, SetSigma, ToggleSummarization, TranscriptPartial,
};
use crate::store::CorrectionDraft;

/// Raw input from a transport.
#[derive(Debug)]
pub(crate) enum Inbound {
    Body(Vec<u8>),
    Oversized(usize),
}

struct Joined {
    session: Arc<Session>,
    client_kind: ClientKind,
}

struct Conn {
    state: Arc<ServerState>,
    peer: Peer,
    joined: Option<Joined>,
    last_seq: Option<u64>,
}

fn unjoined(payload: impl Serialize, kind: &'static str) -> Outgoing {
    Outgoing {
        kind,
        session_id: Arc::from(""),
        payload: Arc::new(serde_json::to_value(payload).expect("payload serializes")),
    }
}

impl Conn {
    fn session_id(&self) -> Arc<str> {
        self.joined
            .as_ref()
            .map_or_else(|| Arc::from(""), |j| j.session.id.clone())
    }

    async fn send(&self, kind: &'static str, payload: impl Serialize) {
        let out = match &self.joined {
            Some(j) => j.session.outgoing(kind, payload),
            None => unjoined(payload, kind),
        };
        // A closed channel means the writer is gone; the read loop ends shortly.
        let _ = self.peer.tx.send(out).await;
    }

    async fn error(&self, err: ErrorPayload) {
        self.send(kind::ERROR, err).await;
    }

    async fn handle(&mut self, input: Inbound) {
        let body = match input {
            Inbound::Body(body) => body,
            Inbound::Oversized(len) => {
                self.error(ErrorPayload::new(
                    code::TOO_LARGE,
                    format!("frame of {len} bytes discarded"),
                ))
                .await;
                return;
            }
        };
        let frame = match Frame::parse(&body) {
            Ok(f) => f,
            Err(e) => {
                self.error(ErrorPayload::new(code::BAD_FRAME, e.to_string())).await;
                return;
            }
        };
        if let Some(last) = self.last_seq {
            if frame.seq <= last {
                self.error(
                    ErrorPayload::new(code::SEQ, format!("seq {} does not follow {last}", frame.seq))
                        .with_ref(frame.seq),
                )
                .await;
                return;
            }
        }
        self.last_seq = Some(frame.seq);

        if frame.kind == kind::HEARTBEAT {
            return;
        }
        if self.joined.is_none() {
            if frame.kind == kind::HELLO {
                self.hello(&frame).await;
            } else {
                self.error(ErrorPayload::new(code::HANDSHAKE, "first frame must be `hello`").with_ref(frame.seq))
                    .await;
            }
            return;
        }
        if *frame.session_id != *self.session_id() {
            self.error(
                ErrorPayload::new(
                    code::SESSION,
                    format!("connection is bound to session `{}`", self.session_id()),
                )
                .with_ref(frame.seq),
            )
            .await;
            return;
        }
        let result = match frame.kind.as_str() {
            kind::HELLO => Err(ErrorPayload::new(code::HANDSHAKE, "already joined")),
            kind::AUDIO => self.audio(&frame).await,
            kind::SET_SIGMA => match frame.payload_as::<SetSigma>() {
                Ok(p) => {
                    self.control(SessionConfigPatch {
                        target_sigma: Some(p.target_sigma),
                        ..Default::default()
                    })
                    .await
                }
                Err(e) => Err(bad_payload(e)),
            },
            kind::TOGGLE_SUMMARIZATION => match frame.payload_as::<ToggleSummarization>() {
                Ok(p) => {
                    let enabled = p
                        .enabled
                        .unwrap_or_else(|| !self.session().runner.config().summarization_enabled);
                    self.control(SessionConfigPatch {
                        summarization_enabled: Some(enabled),
                        ..Default::default()
                    })
                    .await
                }
                Err(e) => Err(bad_payload(e)),
            },
            kind::UPDATE_CONFIG => match frame.payload_as::<SessionConfigPatch>() {
                Ok(patch) => self.control(patch).await,
                Err(e) => Err(bad_payload(e)),
            },
            kind::SET_DISPLAY_MODE => match frame.payload_as::<SetDisplayMode>() {
                // Display modes are rendered client-side; acknowledge with the current config.
                Ok(_) => {
                    self.send_ack().await;
                    Ok(())
                }
                Err(e) => Err(bad_payload(e)),
            },
            kind::CORRECTION => self.correction(&frame).await,
            other => Err(ErrorPayload::new(
                code::UNKNOWN_TYPE,
                format!("unknown frame type `{other}`"),
            )),
        };
        if let Err(err) = result {
            self.error(err.with_ref(frame.seq)).await;
        }
    }

    fn session(&self) -> &Arc<Session> {
        &self.joined.as_ref().expect("joined").session
    }

    async fn send_ack(&self) {
        let j = self.joined.as_ref().expect("joined");
        self.send(
            kind::CONFIG_ACK,
            ConfigAck {
                client_kind: j.client_kind,
                config: j.session.runner.config(),
            },
        )
        .await;
    }

    async fn hello(&mut self, frame: &Frame) {
        let hello = match frame.payload_as::<Hello>() {
            Ok(h) => h,
            Err(e) => {
                self.error(bad_payload(e).with_ref(frame.seq)).await;
                return;
            }
        };
        let created = self.state.session(&frame.session_id, |cfg| cfg.apply(&hello.config));
        let (session, fresh) = match created {
            Ok(s) => s,
            Err(e) => {
                self.error(ErrorPayload::new(code::CONFIG, e.to_string()).with_ref(frame.seq))
                    .await;
                return;
            }
        };
        // A speaker joining an existing session may still adjust it.
        if !fresh && hello.client_kind == ClientKind::Speaker && hello.config != SessionConfigPatch::default() {
            if let Err(e) = session.runner.update_config(&hello.config) {
                self.error(ErrorPayload::new(code::CONFIG, e.to_string()).with_ref(frame.seq))
                    .await;
                return;
            }
        }
        self.joined = Some(Joined {
            session: session.clone(),
            client_kind: hello.client_kind,
        });
        self.send_ack().await;
        if hello.client_kind == ClientKind::Viewer {
            session.add_viewer(self.peer.clone());
        }
        tracing::info!(session = %session.id, peer = self.peer.id, kind = ?hello.client_kind, "joined");
    }

    async fn audio(&mut self, frame: &Frame) -> Result<(), ErrorPayload> {
        if self.joined.as_ref().map(|j| j.client_kind) != Some(ClientKind::Speaker) {
            return Err(ErrorPayload::new(code::FORBIDDEN, "only speakers may send audio"));
        }
        let payload: AudioPayload = frame.payload_as().map_err(bad_payload)?;
        let audio = payload.audio_ref().map_err(bad_payload)?;
        let session = self.session().clone();
        let label = payload
            .speaker_label
            .clone()
            .unwrap_or_else(|| format!("speaker-{}", self.peer.id));
        if payload.partial {
            let cfg = session.runner.config();
            let pipeline = session.runner.pipeline().clone();
            let recognized = tokio::task::spawn_blocking(move || pipeline.recognize(&audio, &cfg))
                .await
                .map_err(|e| ErrorPayload::new(code::STAGE_FAILED, e.to_string()))?;
            return match recognized {
                Ok((text, _)) => {
                    session.broadcast(session.outgoing(
                        kind::TRANSCRIPT_PARTIAL,
                        TranscriptPartial {
                            text,
                            speaker_label: Some(label),
                        },
                    ));
                    Ok(())
                }
                Err(e) => {
                    let mut err = ErrorPayload::new(code::STAGE_FAILED, e.to_string());
                    err.stage = e.stage();
                    Err(err)
                }
            };
        }
        let job = session.runner.ingest(label, JobInput::Audio(audio));
        session.register_origin(job.utterance_id, self.peer.clone());
        let runner = session.runner.clone();
        tokio::task::spawn_blocking(move || runner.run(job));
        Ok(())
    }

    async fn control(&mut self, patch: SessionConfigPatch) -> Result<(), ErrorPayload> {
        let session = self.session().clone();
        let config = session
            .runner
            .update_config(&patch)
            .map_err(|e| ErrorPayload::new(code::CONFIG, e.to_string()))?;
        let is_viewer = self.joined.as_ref().map(|j| j.client_kind) == Some(ClientKind::Viewer);
        if !is_viewer {
            self.send_ack().await;
        }
        session.broadcast(session.outgoing(
            kind::CONFIG_ACK,
            ConfigAck {
                client_kind: ClientKind::Viewer,
                config,
            },
        ));
        Ok(())
    }

    async fn correction(&mut self, frame: &Frame) -> Result<(), ErrorPayload> {
        let payload: CorrectionPayload = frame.payload_as().map_err(bad_payload)?;
        let session = self.session().clone();
        let record_id = session.record_for(payload.utterance_id).ok_or_else(|| {
            ErrorPayload::new(
                code::DANGLING,
                format!("no collected record for utterance {}", payload.utterance_id),
            )
        })?;
        let store = self
            .state
            .pipeline
            .store()
            .cloned()
            .ok_or_else(|| ErrorPayload::new(code::STORE, "server has no data store"))?;
        let draft = CorrectionDraft {
            record_id,
            corrected_summary: payload.corrected_summary,
            author_label: payload.author_label.unwrap_or_else(|| format!("peer-{}", self.peer.id)),
        };
        let correction_id = tokio::task::spawn_blocking(move || store.apply_correction(draft))
            .await
            .map_err(|e| ErrorPayload::new(code::STORE, e.to_string()))?
            .map_err(|e| ErrorPayload::new(code::STORE, e.to_string()))?;
        self.send(
            kind::CORRECTION_ACK,
            CorrectionAck {
                utterance_id: payload.utterance_id,
                record_id,
                correction_id,
            },
        )
        .await;
        Ok(())
    }
}

fn bad_payload(e: ProtocolError) -> ErrorPayload {
    ErrorPayload::new(code::BAD_PAYLOAD, e.to_string())
}

/// Drives one connection until the transport closes, the peer is killed, or
/// heartbeats stop.
pub(crate) async fn run_connection(
    state: Arc<ServerState>,
    mut inbound: mpsc::Receiver<Inbound>,
    peer: Peer,
    mut kill: watch::Receiver<Option<ErrorPayload>>,
) {
    let interval = state.settings.heartbeat_interval();
    let allowed_silence = interval * state.settings.missed_heartbeats.max(1);
    let mut ticker = interval_at(Instant::now() + interval, interval);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut last_seen = Instant::now();
    let mut conn = Conn {
        state,
        peer,
        joined: None,
        last_seq: None,
    };

    loop {
        tokio::select! {
            biased;
            _ = kill.changed() => break,
            input = inbound.recv() => match input {
                Some(input) => {
                    last_seen = Instant::now();
                    conn.handle(input).await;
                }
                None => break,
            },
            _ = ticker.tick() => {
                if last_seen.elapsed() > allowed_silence {
                    conn.peer.kill.send_replace(Some(ErrorPayload::new(
                        code::HEARTBEAT_TIMEOUT,
                        format!("no frames for {} ms", last_seen.elapsed().as_millis()),
                    )));
                    break;
                }
                conn.send(kind::HEARTBEAT, serde_json::json!({})).await;
                if let Some(j) = &conn.joined {
                    if j.client_kind == ClientKind::Viewer {
                        conn.send(kind::METRICS, j.session.metrics()).await;
                    }
                }
            }
        }
    }
    if let Some(j) = &conn.joined {
        j.session.remove_peer(conn.peer.id);
        tracing::info!(session = %j.session.id, peer = conn.peer.id, "left");
    }
}
