//! Conversation latency model for subtitle-translated dialogue.
//!
//! One conversational turn (read the subtitle, think, speak, get translated)
//! costs
//!
//! ```text
//! total = 60·wc·σ/reading_wpm + 60·wc/speaking_wpm + γ + t_trans + t_sum
//!       = ε·wc + γ + t_trans + t_sum,      ε = 60·(σ/reading_wpm + 1/speaking_wpm)
//! ```
//!
//! seconds, where `wc` is the word count of the utterance and `σ` the
//! compression ratio applied by summarization. The same `wc` is used for the
//! spoken source and the read target; cross-language length differences are
//! not modeled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Average adult silent reading rate, words per minute.
pub const DEFAULT_READING_WPM: f64 = 238.0;
/// Average information rate of speech, English words per minute.
pub const DEFAULT_SPEAKING_WPM: f64 = 150.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatencyError {
    #[error("compression ratio must be in (0, 1], got {0}")]
    Sigma(f64),
    #[error("{name} must be a finite non-negative number of seconds, got {value}")]
    NegativeTime { name: &'static str, value: f64 },
    #[error("{name} must be strictly positive, got {value}")]
    Rate { name: &'static str, value: f64 },
    #[error("word count must be non-negative, got {0}")]
    WordCount(f64),
    #[error("dialogue needs at least one turn")]
    EmptyDialogue,
}

/// Human reading and speaking rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub reading_wpm: f64,
    pub speaking_wpm: f64,
}

impl Default for RateConstants {
    fn default() -> Self {
        Self {
            reading_wpm: DEFAULT_READING_WPM,
            speaking_wpm: DEFAULT_SPEAKING_WPM,
        }
    }
}

impl RateConstants {
    pub fn new(reading_wpm: f64, speaking_wpm: f64) -> Result<Self, LatencyError> {
        let rates = Self {
            reading_wpm,
            speaking_wpm,
        };
        rates.validate()?;
        Ok(rates)
    }

    pub fn validate(&self) -> Result<(), LatencyError> {
        for (name, value) in [("reading_wpm", self.reading_wpm), ("speaking_wpm", self.speaking_wpm)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(LatencyError::Rate { name, value });
            }
        }
        Ok(())
    }

    fn seconds_per_read_word(&self) -> f64 {
        60.0 / self.reading_wpm
    }

    fn seconds_per_spoken_word(&self) -> f64 {
        60.0 / self.speaking_wpm
    }
}

/// Inputs of one turn: word count, compression ratio and the three fixed
/// time terms (cognition, translation, summarization), all in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingParams {
    pub wc: u64,
    pub sigma: f64,
    pub gamma: f64,
    pub t_trans: f64,
    pub t_sum: f64,
}

impl TimingParams {
    pub fn new(wc: u64, sigma: f64, gamma: f64, t_trans: f64, t_sum: f64) -> Result<Self, LatencyError> {
        let params = Self {
            wc,
            sigma,
            gamma,
            t_trans,
            t_sum,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), LatencyError> {
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(LatencyError::Sigma(self.sigma));
        }
        for (name, value) in [("gamma", self.gamma), ("t_trans", self.t_trans), ("t_sum", self.t_sum)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(LatencyError::NegativeTime { name, value });
            }
        }
        Ok(())
    }
}

/// Evaluated time components of one turn, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub reading_s: f64,
    pub speaking_s: f64,
    pub cognition_s: f64,
    pub translation_s: f64,
    pub summarization_s: f64,
    pub total_s: f64,
    pub epsilon_s_per_word: f64,
}

/// Evaluates the per-turn latency for `params`.
pub fn transmission_time(params: &TimingParams, rates: &RateConstants) -> Result<LatencyBreakdown, LatencyError> {
    params.validate()?;
    rates.validate()?;
    let wc = params.wc as f64;
    let reading_s = 60.0 * wc * params.sigma / rates.reading_wpm;
    let speaking_s = 60.0 * wc / rates.speaking_wpm;
    let total_s = reading_s + speaking_s + params.gamma + params.t_trans + params.t_sum;
    Ok(LatencyBreakdown {
        reading_s,
        speaking_s,
        cognition_s: params.gamma,
        translation_s: params.t_trans,
        summarization_s: params.t_sum,
        total_s,
        epsilon_s_per_word: 60.0 * (params.sigma / rates.reading_wpm + 1.0 / rates.speaking_wpm),
    })
}

/// Reading time saved by compressing a `wc`-word utterance to ratio `sigma`,
/// all other terms held fixed.
///
/// Unlike [`TimingParams`], `sigma = 0` is accepted here: it is the
/// theoretical upper bound on the saving.
pub fn savings(wc: f64, sigma: f64, rates: &RateConstants) -> Result<f64, LatencyError> {
    if !(wc.is_finite() && wc >= 0.0) {
        return Err(LatencyError::WordCount(wc));
    }
    if !(0.0..=1.0).contains(&sigma) {
        return Err(LatencyError::Sigma(sigma));
    }
    rates.validate()?;
    Ok(wc * 60.0 * (1.0 - sigma) / rates.reading_wpm)
}

/// Range of the seconds-per-word coefficient: `(min, max]` where `min` is
/// approached as σ→0 and `max` is reached at σ=1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBounds {
    pub min_exclusive: f64,
    pub max_inclusive: f64,
}

impl EpsilonBounds {
    pub fn contains(&self, epsilon: f64) -> bool {
        epsilon > self.min_exclusive && epsilon <= self.max_inclusive
    }
}

pub fn epsilon_bounds(rates: &RateConstants) -> EpsilonBounds {
    let min = rates.seconds_per_spoken_word();
    EpsilonBounds {
        min_exclusive: min,
        max_inclusive: min + rates.seconds_per_read_word(),
    }
}

/// Result of running turns back to back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSummary {
    pub total_s: f64,
    pub per_turn: Vec<LatencyBreakdown>,
}

/// Runs `turns` sequentially (each turn starts when the previous one is fully
/// translated) and sums their latencies.
pub fn simulate_dialogue(turns: &[TimingParams], rates: &RateConstants) -> Result<DialogueSummary, LatencyError> {
    if turns.is_empty() {
        return Err(LatencyError::EmptyDialogue);
    }
    let per_turn = turns
        .iter()
        .map(|turn| transmission_time(turn, rates))
        .collect::<Result<Vec<_>, _>>()?;
    let total_s = per_turn.iter().map(|b| b.total_s).sum();
    Ok(DialogueSummary { total_s, per_turn })
}

/// One point of a savings-vs-σ sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sigma: f64,
    pub savings_s: f64,
    pub epsilon_s_per_word: f64,
}

/// Evaluates savings at `steps + 1` evenly spaced σ values over `[0, 1]`.
pub fn savings_sweep(wc: f64, steps: usize, rates: &RateConstants) -> Result<Vec<SweepPoint>, LatencyError> {
    let steps = steps.max(1);
    (0..=steps)
        .map(|i| {
            let sigma = i as f64 / steps as f64;
            Ok(SweepPoint {
                sigma,
                savings_s: savings(wc, sigma, rates)?,
                epsilon_s_per_word: 60.0 * (sigma / rates.reading_wpm + 1.0 / rates.speaking_wpm),
            })
        })
        .collect()
}
