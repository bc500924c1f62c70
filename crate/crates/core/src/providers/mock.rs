//! Deterministic stand-ins for real ASR, MT and summarization engines.

use std::collections::HashMap;
use std::path::Path;

use super::{AudioRef, ProviderError, SpeechRecognizer, Summarizer, Translator};
use crate::text::words;

/// Recognizer that looks fixture ids up in a transcript table.
#[derive(Debug, Clone, Default)]
pub struct FixtureRecognizer {
    table: HashMap<String, String>,
}

impl FixtureRecognizer {
    pub fn new(table: HashMap<String, String>) -> Self {
        Self { table }
    }

    /// Loads a JSON object mapping fixture id to transcript.
    pub fn from_json_file(path: &Path) -> Result<Self, ProviderError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("reading fixtures {}: {e}", path.display())))?;
        let table = serde_json::from_str(&raw)
            .map_err(|e| ProviderError::Config(format!("parsing fixtures {}: {e}", path.display())))?;
        Ok(Self { table })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl SpeechRecognizer for FixtureRecognizer {
    fn transcribe(&self, audio: &AudioRef) -> Result<String, ProviderError> {
        match audio {
            AudioRef::Fixture(id) => self
                .table
                .get(id)
                .cloned()
                .ok_or_else(|| ProviderError::FixtureNotFound(id.clone())),
            AudioRef::Base64(_) => Err(ProviderError::UnsupportedAudio(
                "mock recognizer only accepts fixture ids".into(),
            )),
        }
    }
}

/// Marks every word with the target language, e.g. `hello` -> `ja:hello`.
/// Word count is preserved and the mapping is invertible.
#[derive(Debug, Clone, Copy, Default)]
pub struct MapTranslator;

impl MapTranslator {
    pub fn invert(text: &str, tgt: &str) -> String {
        let prefix = format!("{tgt}:");
        words(text)
            .map(|w| w.strip_prefix(prefix.as_str()).unwrap_or(w))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Translator for MapTranslator {
    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ProviderError> {
        if !self.supports(src, tgt) {
            return Err(ProviderError::UnsupportedPair {
                src: src.to_owned(),
                tgt: tgt.to_owned(),
            });
        }
        let out = words(text).map(|w| format!("{tgt}:{w}")).collect::<Vec<_>>();
        if out.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        Ok(out.join(" "))
    }

    fn supports(&self, src: &str, tgt: &str) -> bool {
        !src.is_empty() && !tgt.is_empty() && src != tgt
    }
}

/// Keeps the first ⌈σ·n⌉ words of an n-word input.
#[derive(Debug, Clone, Copy, Default)]
pub struct TruncateSummarizer;

impl TruncateSummarizer {
    pub fn kept_words(n: usize, target_sigma: f64) -> usize {
        // Guard against products like 0.1 * 30 = 3.0000000000000004.
        let raw = (target_sigma * n as f64 - 1e-9).ceil();
        (raw.max(1.0) as usize).min(n)
    }
}

impl Summarizer for TruncateSummarizer {
    fn summarize(&self, text: &str, _template: &str, target_sigma: f64) -> Result<String, ProviderError> {
        if !(target_sigma > 0.0 && target_sigma <= 1.0) {
            return Err(ProviderError::InvalidSigma(target_sigma));
        }
        let all: Vec<&str> = words(text).collect();
        if all.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let keep = Self::kept_words(all.len(), target_sigma);
        Ok(all[..keep].join(" "))
    }
}
