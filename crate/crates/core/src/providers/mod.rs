//! Pluggable backends for the three pipeline stages.
//!
//! Every stage has a small synchronous trait. Mocks are deterministic, the
//! [`delay`] wrapper injects seeded latency in front of any backend, and the
//! [`http`] adapter bridges external services through a generic JSON contract.

pub mod delay;
pub mod http;
pub mod mock;
pub mod registry;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use delay::{with_delay, DelaySpec, Delayed};
pub use http::HttpProvider;
pub use mock::{FixtureRecognizer, MapTranslator, TruncateSummarizer};
pub use registry::{ProviderDescriptor, ProviderKind, ProviderMode, ProviderRegistry, SummarizerEntry};

/// Placeholder replaced by the input text when a summarization prompt is built.
pub const USER_INPUT_PLACEHOLDER: &str = "{user input}";
pub const DEFAULT_PROMPT_TEMPLATE: &str = "Summarize this sentence: {user input}";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("fixture not found: {0}")]
    FixtureNotFound(String),
    #[error("unsupported language pair {src} -> {tgt}")]
    UnsupportedPair { src: String, tgt: String },
    #[error("input text is empty")]
    EmptyInput,
    #[error("provider returned empty output")]
    EmptyOutput,
    #[error("unsupported audio payload: {0}")]
    UnsupportedAudio(String),
    #[error("invalid target sigma {0}")]
    InvalidSigma(f64),
    #[error("invalid delay: {0}")]
    InvalidDelay(String),
    #[error("timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("http error: {0}")]
    Http(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

/// Audio handed to a recognizer. Payloads are opaque; mocks key on fixture
/// ids, real engines receive the raw bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioRef {
    Fixture(String),
    #[serde(with = "base64_bytes")]
    Base64(Vec<u8>),
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let encoded = String::deserialize(d)?;
        STANDARD.decode(encoded).map_err(serde::de::Error::custom)
    }
}

pub trait SpeechRecognizer: Send + Sync {
    fn transcribe(&self, audio: &AudioRef) -> Result<String, ProviderError>;
}

pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ProviderError>;

    /// Whether this backend can translate `src` into `tgt`.
    fn supports(&self, _src: &str, _tgt: &str) -> bool {
        true
    }
}

pub trait Summarizer: Send + Sync {
    /// `template` carries the prompt with a `{user input}` placeholder; backends
    /// that do not prompt a language model may ignore it.
    fn summarize(&self, text: &str, template: &str, target_sigma: f64) -> Result<String, ProviderError>;
}

pub fn build_prompt(template: &str, text: &str) -> String {
    template.replace(USER_INPUT_PLACEHOLDER, text)
}

impl<T: SpeechRecognizer + ?Sized> SpeechRecognizer for std::sync::Arc<T> {
    fn transcribe(&self, audio: &AudioRef) -> Result<String, ProviderError> {
        (**self).transcribe(audio)
    }
}

impl<T: Translator + ?Sized> Translator for std::sync::Arc<T> {
    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ProviderError> {
        (**self).translate(text, src, tgt)
    }

    fn supports(&self, src: &str, tgt: &str) -> bool {
        (**self).supports(src, tgt)
    }
}

impl<T: Summarizer + ?Sized> Summarizer for std::sync::Arc<T> {
    fn summarize(&self, text: &str, template: &str, target_sigma: f64) -> Result<String, ProviderError> {
        (**self).summarize(text, template, target_sigma)
    }
}
