//! Repeated-run latency benchmark for summarization backends.
//!
//! Runs are strictly sequential so that one run's wall time never overlaps
//! another's. Output length is counted in whitespace words.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::providers::Summarizer;
use crate::text::word_count;

/// Default tolerance for timer and scheduler overhead on top of injected delays.
pub const DEFAULT_SCHEDULING_SLACK_S: f64 = 0.020;

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("n_reps must be at least 1")]
    NoReps,
    #[error("input text has no words")]
    EmptyInput,
    #[error("malformed table row {line}: {message}")]
    Table { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSample {
    pub seconds: f64,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub provider_id: String,
    pub n_reps: usize,
    /// Runs that completed; less than `n_reps` only when `failure` is set.
    pub completed: usize,
    pub mean_s: f64,
    /// Sample standard deviation (n - 1 denominator); zero for a single run.
    pub sd_s: f64,
    pub mean_output_tokens: f64,
    pub sd_output_tokens: f64,
    pub mean_sigma: f64,
    pub seed: Option<u64>,
    pub per_run_samples: Vec<RunSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl BenchResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub n_reps: usize,
    pub target_sigma: f64,
    pub prompt_template: String,
    /// Recorded in the result; seeding itself happens when the provider is built.
    pub seed: Option<u64>,
}

/// Mean and sample variance in one pass (Welford).
#[derive(Debug, Default, Clone, Copy)]
struct Running {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.mean
        }
    }

    fn sample_sd(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

/// Calls `provider` `n_reps` times on `input`, timing each call on `clock`.
/// A provider error stops the run and is reported in `failure` alongside the
/// statistics of the runs that succeeded.
pub fn run_bench(
    provider: &dyn Summarizer,
    provider_id: &str,
    input: &str,
    opts: &BenchOptions,
    clock: &dyn Clock,
) -> Result<BenchResult, BenchError> {
    if opts.n_reps == 0 {
        return Err(BenchError::NoReps);
    }
    let input_words = word_count(input);
    if input_words == 0 {
        return Err(BenchError::EmptyInput);
    }

    let mut samples = Vec::with_capacity(opts.n_reps);
    let mut failure = None;
    for rep in 0..opts.n_reps {
        let start = clock.now();
        let result = provider.summarize(input, &opts.prompt_template, opts.target_sigma);
        let seconds = clock.now().saturating_sub(start).as_secs_f64();
        match result {
            Ok(output) => samples.push(RunSample {
                seconds,
                tokens: word_count(&output),
            }),
            Err(e) => {
                failure = Some(format!("run {} of {}: {e}", rep + 1, opts.n_reps));
                break;
            }
        }
    }

    let mut time = Running::default();
    let mut tokens = Running::default();
    for s in &samples {
        time.push(s.seconds);
        tokens.push(s.tokens as f64);
    }
    Ok(BenchResult {
        provider_id: provider_id.to_owned(),
        n_reps: opts.n_reps,
        completed: samples.len(),
        mean_s: time.mean(),
        sd_s: time.sample_sd(),
        mean_output_tokens: tokens.mean(),
        sd_output_tokens: tokens.sample_sd(),
        mean_sigma: tokens.mean() / input_words as f64,
        seed: opts.seed,
        per_run_samples: samples,
        failure,
    })
}

/// Formats `x` with three significant digits, keeping trailing zeros
/// (`0.35` -> `0.350`, `6.681` -> `6.68`).
pub fn format_sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.2}");
    }
    let decimals = |exp: i32| (2 - exp).max(0) as usize;
    let exp = x.abs().log10().floor() as i32;
    let s = format!("{:.*}", decimals(exp), x);
    // Rounding may carry into the next decade, e.g. 9.996 -> "10.00".
    match s.parse::<f64>() {
        Ok(v) if v.abs() >= 10f64.powi(exp + 1) => format!("{:.*}", decimals(exp + 1), x),
        _ => s,
    }
}

pub const MODEL_HEADER: &str = "Model";
pub const TIME_HEADER: &str = "Average required time for execution (SD)";
pub const TOKENS_HEADER: &str = "The num of output token";

/// Renders results as a plain-text table: model, `mean (sd)` in seconds and
/// mean output length.
pub fn report_table(results: &[BenchResult]) -> String {
    let rows: Vec<[String; 3]> = results
        .iter()
        .map(|r| {
            [
                r.provider_id.clone(),
                format!("{} ({})", format_sig3(r.mean_s), format_sig3(r.sd_s)),
                format!("{:.1}", r.mean_output_tokens),
            ]
        })
        .collect();
    let header = [MODEL_HEADER, TIME_HEADER, TOKENS_HEADER];
    let widths: Vec<usize> = (0..3)
        .map(|i| {
            rows.iter()
                .map(|r| r[i].len())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();

    let mut out = String::new();
    let mut line = |cells: [&str; 3]| {
        let _ = writeln!(
            out,
            "{:<w0$}  {:<w1$}  {}",
            cells[0],
            cells[1],
            cells[2],
            w0 = widths[0],
            w1 = widths[1]
        );
    };
    line(header);
    let rules: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line([&rules[0], &rules[1], &rules[2]]);
    for r in &rows {
        line([&r[0], &r[1], &r[2]]);
    }
    out
}

/// One JSON object per result, without per-run samples.
pub fn report_jsonl(results: &[BenchResult]) -> String {
    results
        .iter()
        .map(|r| {
            let row = TableRow {
                model: r.provider_id.clone(),
                mean_s: r.mean_s,
                sd_s: r.sd_s,
                output_tokens: r.mean_output_tokens,
            };
            serde_json::to_string(&row).expect("table row serializes") + "\n"
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub mean_s: f64,
    pub sd_s: f64,
    pub output_tokens: f64,
}

/// Parses the output of [`report_table`] back into rows, at the table's
/// printed precision.
pub fn parse_table(table: &str) -> Result<Vec<TableRow>, BenchError> {
    let mut rows = Vec::new();
    for (idx, raw) in table.lines().enumerate().skip(2) {
        if raw.trim().is_empty() {
            continue;
        }
        let bad = |message: &str| BenchError::Table {
            line: idx + 1,
            message: message.to_owned(),
        };
        let mut parts: Vec<&str> = raw.split_whitespace().collect();
        if parts.len() < 4 {
            return Err(bad("expected model, mean, (sd), tokens"));
        }
        let tokens = parts.pop().unwrap();
        let sd = parts.pop().unwrap();
        let mean = parts.pop().unwrap();
        let sd = sd
            .strip_prefix('(')
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(|| bad("sd must be parenthesized"))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("not a number: {s}")));
        rows.push(TableRow {
            model: parts.join(" "),
            mean_s: num(mean)?,
            sd_s: num(sd)?,
            output_tokens: num(tokens)?,
        });
    }
    Ok(rows)
}
