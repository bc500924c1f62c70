//! Per-utterance inference path: recognize, translate, summarize.
//!
//! Each stage call is timed on the pipeline's [`Clock`]. Summarization runs on
//! the translated text; with summarization disabled the stage is the identity
//! and reports zero time. When a session collects training data, every
//! captioned utterance produces exactly one paired record.

mod reorder;
mod session;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use reorder::ReorderBuffer;
pub use session::{Emission, Job, JobInput, SessionRunner};

use crate::clock::Clock;
use crate::latency::{transmission_time, LatencyBreakdown, LatencyError, RateConstants, TimingParams};
use crate::providers::{AudioRef, ProviderError, ProviderRegistry};
use crate::store::{DataStore, PairedDraft, StoreError};
use crate::text::{measure_sigma, word_count};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Asr,
    Translate,
    Summarize,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Asr => "asr",
            Stage::Translate => "translate",
            Stage::Summarize => "summarize",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("utterance {0} has an empty transcript")]
    Skipped(u64),
    #[error("{stage} stage failed: {source}")]
    StageFailed {
        stage: Stage,
        #[source]
        source: ProviderError,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data store: {0}")]
    Store(#[from] StoreError),
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::StageFailed { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

/// A recognized speech segment, one unit of pipeline work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: u64,
    pub session_id: String,
    pub speaker_label: String,
    pub source_lang: String,
    pub text: String,
    /// Set for segments that carry no speech; such utterances may have empty text.
    #[serde(default)]
    pub silence: bool,
    /// Seconds on the pipeline clock.
    pub received_at: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLatencies {
    pub asr_s: f64,
    pub translate_s: f64,
    pub summarize_s: f64,
}

impl StageLatencies {
    pub fn total(&self) -> f64 {
        self.asr_s + self.translate_s + self.summarize_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub utterance_id: u64,
    pub session_id: String,
    pub speaker_label: String,
    pub source_lang: String,
    pub target_lang: String,
    pub source_text: String,
    pub translated_text: String,
    pub summarized_text: String,
    pub summarization_enabled: bool,
    pub target_sigma: f64,
    pub sigma_measured: f64,
    pub stage_latencies: StageLatencies,
    /// Seconds on the pipeline clock.
    pub emitted_at: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderIds {
    pub asr: String,
    pub translate: String,
    pub summarize: String,
}

impl Default for ProviderIds {
    fn default() -> Self {
        Self {
            asr: "mock-asr".into(),
            translate: "mock-translate".into(),
            summarize: "mock-truncate".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub source_lang: String,
    pub target_lang: String,
    pub summarization_enabled: bool,
    pub target_sigma: f64,
    pub provider_ids: ProviderIds,
    pub collect_training_data: bool,
    /// Cognition time fed into the per-caption latency estimate, seconds.
    pub gamma_s: f64,
    /// Report the summarization term as zero, for backends that translate and
    /// summarize in one call.
    pub fused_summarization: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            source_lang: "en".into(),
            target_lang: "ja".into(),
            summarization_enabled: true,
            target_sigma: 2.0 / 3.0,
            provider_ids: ProviderIds::default(),
            collect_training_data: true,
            gamma_s: 0.0,
            fused_summarization: false,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.source_lang.trim().is_empty() || self.target_lang.trim().is_empty() {
            return Err(PipelineError::Config("language tags must not be empty".into()));
        }
        if !(self.target_sigma > 0.0 && self.target_sigma <= 1.0) {
            return Err(PipelineError::Config(format!(
                "target_sigma must be in (0, 1], got {}",
                self.target_sigma
            )));
        }
        if !(self.gamma_s.is_finite() && self.gamma_s >= 0.0) {
            return Err(PipelineError::Config(format!(
                "gamma_s must be >= 0, got {}",
                self.gamma_s
            )));
        }
        Ok(())
    }

    pub fn apply(&mut self, patch: &SessionConfigPatch) {
        if let Some(v) = &patch.source_lang {
            self.source_lang = v.clone();
        }
        if let Some(v) = &patch.target_lang {
            self.target_lang = v.clone();
        }
        if let Some(v) = patch.summarization_enabled {
            self.summarization_enabled = v;
        }
        if let Some(v) = patch.target_sigma {
            self.target_sigma = v;
        }
        if let Some(v) = &patch.provider_ids {
            self.provider_ids = v.clone();
        }
        if let Some(v) = patch.collect_training_data {
            self.collect_training_data = v;
        }
        if let Some(v) = patch.gamma_s {
            self.gamma_s = v;
        }
        if let Some(v) = patch.fused_summarization {
            self.fused_summarization = v;
        }
    }
}

/// Partial session configuration, as requested by a client.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfigPatch {
    pub source_lang: Option<String>,
    pub target_lang: Option<String>,
    pub summarization_enabled: Option<bool>,
    pub target_sigma: Option<f64>,
    pub provider_ids: Option<ProviderIds>,
    pub collect_training_data: Option<bool>,
    pub gamma_s: Option<f64>,
    pub fused_summarization: Option<bool>,
}

/// Shared, stateless pipeline. Session state lives in [`SessionRunner`].
pub struct Pipeline {
    registry: Arc<ProviderRegistry>,
    store: Option<Arc<DataStore>>,
    clock: Arc<dyn Clock>,
}

impl Pipeline {
    pub fn new(registry: Arc<ProviderRegistry>, store: Option<Arc<DataStore>>, clock: Arc<dyn Clock>) -> Self {
        Self { registry, store, clock }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn store(&self) -> Option<&Arc<DataStore>> {
        self.store.as_ref()
    }

    pub fn registry(&self) -> &Arc<ProviderRegistry> {
        &self.registry
    }

    fn timed<T>(&self, f: impl FnOnce() -> T) -> (T, f64) {
        let start = self.clock.now();
        let out = f();
        let elapsed = self.clock.now().saturating_sub(start);
        (out, elapsed.as_secs_f64())
    }

    /// Runs the recognizer named by `cfg` on `audio`; returns the transcript
    /// and the measured stage time in seconds.
    pub fn recognize(&self, audio: &AudioRef, cfg: &SessionConfig) -> Result<(String, f64), PipelineError> {
        let asr = self
            .registry
            .recognizer(&cfg.provider_ids.asr)
            .ok_or_else(|| PipelineError::Config(format!("unknown asr provider `{}`", cfg.provider_ids.asr)))?;
        let (result, secs) = self.timed(|| asr.transcribe(audio));
        let text = result.map_err(|source| PipelineError::StageFailed {
            stage: Stage::Asr,
            source,
        })?;
        Ok((text, secs))
    }

    /// Translates and optionally summarizes a recognized utterance.
    pub fn process_utterance(&self, u: &Utterance, cfg: &SessionConfig) -> Result<Caption, PipelineError> {
        let mut caption = self.caption_utterance(u, cfg, 0.0)?;
        self.record(&mut caption, cfg)?;
        Ok(caption)
    }

    /// Appends the caption to the data store when collection is on, setting
    /// `record_id`. Sessions call this in ingestion order.
    pub fn record(&self, caption: &mut Caption, cfg: &SessionConfig) -> Result<(), PipelineError> {
        if let (Some(store), true) = (&self.store, cfg.collect_training_data) {
            caption.record_id = Some(store.append(PairedDraft {
                session_id: caption.session_id.clone(),
                source_lang: caption.source_lang.clone(),
                source_text: caption.source_text.clone(),
                target_lang: caption.target_lang.clone(),
                translated_text: caption.translated_text.clone(),
                summarized_text: caption.summarized_text.clone(),
                sigma_measured: Some(caption.sigma_measured),
            })?);
        }
        Ok(())
    }

    pub(crate) fn caption_utterance(
        &self,
        u: &Utterance,
        cfg: &SessionConfig,
        asr_s: f64,
    ) -> Result<Caption, PipelineError> {
        cfg.validate()?;
        if u.text.trim().is_empty() {
            return Err(PipelineError::Skipped(u.utterance_id));
        }
        let translator = self.registry.translator(&cfg.provider_ids.translate).ok_or_else(|| {
            PipelineError::Config(format!("unknown translate provider `{}`", cfg.provider_ids.translate))
        })?;
        if !translator.supports(&u.source_lang, &cfg.target_lang) {
            return Err(PipelineError::Config(format!(
                "unsupported language pair {} -> {}",
                u.source_lang, cfg.target_lang
            )));
        }
        let summarizer = if cfg.summarization_enabled {
            Some(self.registry.summarizer(&cfg.provider_ids.summarize).ok_or_else(|| {
                PipelineError::Config(format!("unknown summarize provider `{}`", cfg.provider_ids.summarize))
            })?)
        } else {
            None
        };

        let (result, translate_s) = self.timed(|| translator.translate(&u.text, &u.source_lang, &cfg.target_lang));
        let translated_text = result.map_err(|source| PipelineError::StageFailed {
            stage: Stage::Translate,
            source,
        })?;
        if word_count(&translated_text) == 0 {
            return Err(PipelineError::StageFailed {
                stage: Stage::Translate,
                source: ProviderError::EmptyOutput,
            });
        }

        let (summarized_text, summarize_s) = match summarizer {
            None => (translated_text.clone(), 0.0),
            Some(entry) => {
                let (result, secs) = self.timed(|| {
                    entry
                        .provider
                        .summarize(&translated_text, &entry.prompt_template, cfg.target_sigma)
                });
                let summary = result.map_err(|source| PipelineError::StageFailed {
                    stage: Stage::Summarize,
                    source,
                })?;
                let summary = match word_count(&summary) {
                    0 => {
                        return Err(PipelineError::StageFailed {
                            stage: Stage::Summarize,
                            source: ProviderError::EmptyOutput,
                        })
                    }
                    n if n > word_count(&translated_text) => {
                        tracing::warn!(
                            utterance_id = u.utterance_id,
                            "summary longer than translation; showing the translation"
                        );
                        translated_text.clone()
                    }
                    _ => summary,
                };
                (summary, secs)
            }
        };
        let sigma_measured = measure_sigma(&translated_text, &summarized_text)
            .map_err(|e| PipelineError::Config(format!("cannot measure compression: {e}")))?;

        Ok(Caption {
            utterance_id: u.utterance_id,
            session_id: u.session_id.clone(),
            speaker_label: u.speaker_label.clone(),
            source_lang: u.source_lang.clone(),
            target_lang: cfg.target_lang.clone(),
            source_text: u.text.clone(),
            translated_text,
            summarized_text,
            summarization_enabled: cfg.summarization_enabled,
            target_sigma: cfg.target_sigma,
            sigma_measured,
            stage_latencies: StageLatencies {
                asr_s,
                translate_s,
                summarize_s,
            },
            emitted_at: self.clock.now().as_secs_f64(),
            record_id: None,
        })
    }
}

/// Latency estimate for a caption: word count of the source transcript,
/// measured compression and stage times, configured cognition time.
pub fn caption_latency(
    caption: &Caption,
    cfg: &SessionConfig,
    rates: &RateConstants,
) -> Result<LatencyBreakdown, LatencyError> {
    let params = TimingParams::new(
        word_count(&caption.source_text) as u64,
        caption.sigma_measured,
        cfg.gamma_s,
        caption.stage_latencies.translate_s,
        if cfg.fused_summarization {
            0.0
        } else {
            caption.stage_latencies.summarize_s
        },
    )?;
    transmission_time(&params, rates)
}
