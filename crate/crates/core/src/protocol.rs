//! Wire protocol shared by the stream-socket and browser transports.
//!
//! Every message is a JSON object with exactly four members:
//!
//! ```json
//! {"type": "caption.final", "session_id": "room-1", "seq": 12, "payload": {...}}
//! ```
//!
//! `seq` increases strictly per sender and connection. On a stream socket a
//! frame is a 4-byte big-endian body length followed by the UTF-8 JSON body.
//! On the browser transport each WebSocket text message carries one body,
//! unprefixed.
//!
//! Client to server: `hello`, `audio`, `control.set_sigma`,
//! `control.toggle_summarization`, `control.set_display_mode`,
//! `control.update`, `correction`, `heartbeat`.
//!
//! Server to client: `config.ack`, `transcript.partial`, `caption.final`,
//! `correction.ack`, `metrics`, `heartbeat`, `error`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use crate::latency::LatencyBreakdown;
use crate::pipeline::{Caption, SessionConfig, SessionConfigPatch, Stage};
use crate::providers::AudioRef;

pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

pub mod kind {
    pub const HELLO: &str = "hello";
    pub const AUDIO: &str = "audio";
    pub const SET_SIGMA: &str = "control.set_sigma";
    pub const TOGGLE_SUMMARIZATION: &str = "control.toggle_summarization";
    pub const SET_DISPLAY_MODE: &str = "control.set_display_mode";
    pub const UPDATE_CONFIG: &str = "control.update";
    pub const CORRECTION: &str = "correction";
    pub const HEARTBEAT: &str = "heartbeat";

    pub const CONFIG_ACK: &str = "config.ack";
    pub const TRANSCRIPT_PARTIAL: &str = "transcript.partial";
    pub const CAPTION_FINAL: &str = "caption.final";
    pub const CORRECTION_ACK: &str = "correction.ack";
    pub const METRICS: &str = "metrics";
    pub const ERROR: &str = "error";
}

/// Machine-readable `error` codes.
pub mod code {
    pub const BAD_FRAME: &str = "bad_frame";
    pub const BAD_PAYLOAD: &str = "bad_payload";
    pub const SEQ: &str = "seq";
    pub const UNKNOWN_TYPE: &str = "unknown_type";
    pub const HANDSHAKE: &str = "handshake";
    pub const SESSION: &str = "session";
    pub const FORBIDDEN: &str = "forbidden";
    pub const CONFIG: &str = "config";
    pub const STAGE_FAILED: &str = "stage_failed";
    pub const SKIPPED: &str = "skipped";
    pub const DANGLING: &str = "dangling";
    pub const STORE: &str = "store";
    pub const BACKPRESSURE: &str = "backpressure";
    pub const HEARTBEAT_TIMEOUT: &str = "heartbeat_timeout";
    pub const TOO_LARGE: &str = "too_large";
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_LEN} byte limit")]
    TooLarge(usize),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    #[serde(rename = "type")]
    pub kind: String,
    pub session_id: String,
    pub seq: u64,
    pub payload: Value,
}

impl Frame {
    pub fn new(kind: &str, session_id: impl Into<String>, seq: u64, payload: impl Serialize) -> Self {
        Self {
            kind: kind.to_owned(),
            session_id: session_id.into(),
            seq,
            payload: serde_json::to_value(payload).expect("payload serializes"),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frame serializes")
    }

    pub fn parse(body: &[u8]) -> Result<Self, ProtocolError> {
        let frame: Frame = serde_json::from_slice(body).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        if !frame.payload.is_object() {
            return Err(ProtocolError::Malformed("payload must be a JSON object".into()));
        }
        Ok(frame)
    }

    pub fn payload_as<T: DeserializeOwned>(&self) -> Result<T, ProtocolError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}

/// Length-prefixes `body` for the stream transport.
pub fn encode_body(body: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    if body.len() > MAX_FRAME_LEN {
        return Err(ProtocolError::TooLarge(body.len()));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    Ok(out)
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, ProtocolError> {
    encode_body(frame.to_json().as_bytes())
}

/// Splits one length-prefixed body off the front of `buf`. Returns the body
/// and the number of bytes consumed, or `None` if `buf` is incomplete.
pub fn decode_body(buf: &[u8]) -> Result<Option<(&[u8], usize)>, ProtocolError> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len > MAX_FRAME_LEN {
        return Err(ProtocolError::TooLarge(len));
    }
    if buf.len() < 4 + len {
        return Ok(None);
    }
    Ok(Some((&buf[4..4 + len], 4 + len)))
}

/// Outcome of reading one frame off a stream.
#[derive(Debug)]
pub enum ReadOutcome {
    Body(Vec<u8>),
    /// The announced body exceeded [`MAX_FRAME_LEN`] and was discarded.
    Oversized(usize),
    Eof,
}

pub async fn read_body<R: AsyncRead + Unpin>(reader: &mut R) -> std::io::Result<ReadOutcome> {
    let mut len_buf = [0u8; 4];
    match reader.read_exact(&mut len_buf).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(ReadOutcome::Eof),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_FRAME_LEN {
        tokio::io::copy(&mut reader.take(len as u64), &mut tokio::io::sink()).await?;
        return Ok(ReadOutcome::Oversized(len));
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).await?;
    Ok(ReadOutcome::Body(body))
}

pub async fn write_body<W: AsyncWrite + Unpin>(writer: &mut W, body: &[u8]) -> Result<(), ProtocolError> {
    let framed = encode_body(body)?;
    writer.write_all(&framed).await?;
    writer.flush().await?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    Speaker,
    Viewer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub client_kind: ClientKind,
    #[serde(default)]
    pub config: SessionConfigPatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigAck {
    pub client_kind: ClientKind,
    pub config: SessionConfig,
}

/// `audio` payload: exactly one of `fixture` (mock id) or `base64` (raw audio).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_label: Option<String>,
    /// Partial segments are transcribed and forwarded, never translated.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub partial: bool,
}

impl AudioPayload {
    pub fn fixture(id: impl Into<String>) -> Self {
        Self {
            fixture: Some(id.into()),
            ..Self::default()
        }
    }

    pub fn audio_ref(&self) -> Result<AudioRef, ProtocolError> {
        use base64::Engine;
        match (&self.fixture, &self.base64) {
            (Some(id), None) => Ok(AudioRef::Fixture(id.clone())),
            (None, Some(b64)) => base64::engine::general_purpose::STANDARD
                .decode(b64)
                .map(AudioRef::Base64)
                .map_err(|e| ProtocolError::Malformed(format!("base64: {e}"))),
            _ => Err(ProtocolError::Malformed(
                "audio payload needs exactly one of `fixture` or `base64`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSigma {
    pub target_sigma: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToggleSummarization {
    /// Explicit state; flips the current state when absent.
    #[serde(default)]
    pub enabled: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetDisplayMode {
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionPayload {
    pub utterance_id: u64,
    pub corrected_summary: String,
    #[serde(default)]
    pub author_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionAck {
    pub utterance_id: u64,
    pub record_id: u64,
    pub correction_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptPartial {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionFinal {
    pub caption: Caption,
    pub latency: LatencyBreakdown,
    /// Reading time saved by summarization for this caption, seconds.
    pub savings_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub captions: u64,
    pub failures: u64,
    pub skipped: u64,
    pub mean_asr_s: f64,
    pub mean_translate_s: f64,
    pub mean_summarize_s: f64,
    pub mean_sigma: f64,
    pub total_savings_s: f64,
    pub viewers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance_id: Option<u64>,
    /// `seq` of the offending client frame, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_seq: Option<u64>,
}

impl ErrorPayload {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_owned(),
            message: message.into(),
            stage: None,
            utterance_id: None,
            ref_seq: None,
        }
    }

    pub fn with_ref(mut self, seq: u64) -> Self {
        self.ref_seq = Some(seq);
        self
    }
}
