//! Word-level text helpers.
//!
//! A word is a whitespace-delimited token. Word counts stand in for model
//! tokens everywhere (σ, wc, output length) so results are reproducible
//! across languages and backends.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SigmaError {
    #[error("source text has no words")]
    EmptySource,
    #[error("summary has no words")]
    EmptySummary,
}

pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Compression ratio of `summary_text` relative to `source_text`, by word
/// count.
pub fn measure_sigma(source_text: &str, summary_text: &str) -> Result<f64, SigmaError> {
    let source = word_count(source_text);
    if source == 0 {
        return Err(SigmaError::EmptySource);
    }
    let summary = word_count(summary_text);
    if summary == 0 {
        return Err(SigmaError::EmptySummary);
    }
    Ok(summary as f64 / source as f64)
}
