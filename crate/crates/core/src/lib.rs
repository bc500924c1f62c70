//! Subtitle-translation relay that summarizes translations before display.
//!
//! - [`latency`]: per-turn conversation latency model and savings from compression
//! - [`providers`]: ASR / translation / summarization backends (mock, delay-injected, HTTP)
//! - [`pipeline`]: per-utterance recognize → translate → summarize with ordered emission
//! - [`store`]: append-only paired-data and correction store with JSONL export
//! - [`protocol`] and [`server`]: framed JSON relay protocol and its server
//! - [`bench`]: repeated-run summarizer latency benchmark and report table

pub mod bench;
pub mod clock;
pub mod config;
pub mod latency;
pub mod pipeline;
pub mod protocol;
pub mod providers;
pub mod server;
pub mod store;
pub mod text;

pub use latency::{LatencyBreakdown, RateConstants, TimingParams};
pub use pipeline::{Caption, Pipeline, SessionConfig, Utterance};
pub use store::DataStore;
