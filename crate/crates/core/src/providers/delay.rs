//! Latency injection in front of any provider.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AudioRef, ProviderError, SpeechRecognizer, Summarizer, Translator};
use crate::clock::Clock;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelaySpec {
    Fixed {
        seconds: f64,
    },
    /// Normally distributed delay, clipped at zero.
    Normal {
        mean_s: f64,
        sd_s: f64,
        seed: u64,
    },
}

impl DelaySpec {
    pub fn validate(&self) -> Result<(), ProviderError> {
        match *self {
            DelaySpec::Fixed { seconds } if !(seconds.is_finite() && seconds >= 0.0) => Err(
                ProviderError::InvalidDelay(format!("fixed delay must be non-negative, got {seconds}")),
            ),
            DelaySpec::Normal { mean_s, sd_s, .. } if !(mean_s.is_finite() && sd_s.is_finite() && sd_s >= 0.0) => {
                Err(ProviderError::InvalidDelay(format!(
                    "normal delay needs finite mean and sd >= 0, got ({mean_s}, {sd_s})"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Seed-deterministic source of delay durations. Draws are serialized through
/// a mutex so concurrent callers never share RNG state unsynchronized.
#[derive(Debug)]
pub struct DelaySampler {
    spec: DelaySpec,
    normal: Option<(Normal<f64>, Mutex<ChaCha8Rng>)>,
}

impl DelaySampler {
    pub fn new(spec: DelaySpec) -> Result<Self, ProviderError> {
        spec.validate()?;
        let normal = match spec {
            DelaySpec::Fixed { .. } => None,
            DelaySpec::Normal { mean_s, sd_s, seed } => {
                let dist = Normal::new(mean_s, sd_s).map_err(|e| ProviderError::InvalidDelay(e.to_string()))?;
                Some((dist, Mutex::new(ChaCha8Rng::seed_from_u64(seed))))
            }
        };
        Ok(Self { spec, normal })
    }

    pub fn spec(&self) -> DelaySpec {
        self.spec
    }

    pub fn sample(&self) -> Duration {
        let seconds = match (&self.spec, &self.normal) {
            (DelaySpec::Fixed { seconds }, _) => *seconds,
            (_, Some((dist, rng))) => {
                let mut rng = rng.lock().expect("delay rng poisoned");
                dist.sample(&mut *rng).max(0.0)
            }
            (DelaySpec::Normal { .. }, None) => unreachable!("normal sampler built without distribution"),
        };
        Duration::from_secs_f64(seconds)
    }
}

/// Sleeps a sampled delay on `clock`, then delegates to the wrapped provider.
/// With a timeout set, a draw longer than the timeout sleeps only for the
/// timeout and fails the call.
pub struct Delayed<P> {
    inner: P,
    sampler: DelaySampler,
    clock: Arc<dyn Clock>,
    timeout: Option<Duration>,
}

impl<P> Delayed<P> {
    pub fn new(inner: P, spec: DelaySpec, clock: Arc<dyn Clock>) -> Result<Self, ProviderError> {
        Ok(Self {
            inner,
            sampler: DelaySampler::new(spec)?,
            clock,
            timeout: None,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    fn wait(&self) -> Result<(), ProviderError> {
        let delay = self.sampler.sample();
        match self.timeout {
            Some(limit) if delay > limit => {
                self.clock.sleep(limit);
                Err(ProviderError::Timeout(limit))
            }
            _ => {
                self.clock.sleep(delay);
                Ok(())
            }
        }
    }
}

/// Wraps `provider` with a delay drawn from `spec`.
pub fn with_delay<P>(provider: P, spec: DelaySpec, clock: Arc<dyn Clock>) -> Result<Delayed<P>, ProviderError> {
    Delayed::new(provider, spec, clock)
}

impl<P: SpeechRecognizer> SpeechRecognizer for Delayed<P> {
    fn transcribe(&self, audio: &AudioRef) -> Result<String, ProviderError> {
        self.wait()?;
        self.inner.transcribe(audio)
    }
}

impl<P: Translator> Translator for Delayed<P> {
    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ProviderError> {
        self.wait()?;
        self.inner.translate(text, src, tgt)
    }

    fn supports(&self, src: &str, tgt: &str) -> bool {
        self.inner.supports(src, tgt)
    }
}

impl<P: Summarizer> Summarizer for Delayed<P> {
    fn summarize(&self, text: &str, template: &str, target_sigma: f64) -> Result<String, ProviderError> {
        self.wait()?;
        self.inner.summarize(text, template, target_sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{MonotonicClock, VirtualClock};
    use crate::providers::TruncateSummarizer;
    use std::time::Instant;

    #[test]
    fn fixed_delay_is_at_least_configured() {
        let p = with_delay(
            TruncateSummarizer,
            DelaySpec::Fixed { seconds: 0.1 },
            Arc::new(MonotonicClock::new()),
        )
        .unwrap();
        let start = Instant::now();
        p.summarize("a b c", "", 1.0).unwrap();
        assert!(start.elapsed() >= Duration::from_millis(100));
    }

    #[test]
    fn negative_fixed_delay_rejected() {
        let err = DelaySampler::new(DelaySpec::Fixed { seconds: -0.1 }).unwrap_err();
        assert!(matches!(err, ProviderError::InvalidDelay(_)));
        assert!(DelaySampler::new(DelaySpec::Normal {
            mean_s: 1.0,
            sd_s: -1.0,
            seed: 0
        })
        .is_err());
    }

    #[test]
    fn same_seed_same_sequence() {
        let spec = DelaySpec::Normal {
            mean_s: 2.45,
            sd_s: 0.35,
            seed: 42,
        };
        let a: Vec<_> = (0..20)
            .map({
                let s = DelaySampler::new(spec).unwrap();
                move |_| s.sample()
            })
            .collect();
        let b: Vec<_> = (0..20)
            .map({
                let s = DelaySampler::new(spec).unwrap();
                move |_| s.sample()
            })
            .collect();
        assert_eq!(a, b);
        let other = DelaySampler::new(DelaySpec::Normal {
            mean_s: 2.45,
            sd_s: 0.35,
            seed: 43,
        })
        .unwrap();
        assert_ne!(a[0], other.sample());
    }

    #[test]
    fn normal_draws_track_parameters() {
        let s = DelaySampler::new(DelaySpec::Normal {
            mean_s: 2.45,
            sd_s: 0.35,
            seed: 7,
        })
        .unwrap();
        let draws: Vec<f64> = (0..4000).map(|_| s.sample().as_secs_f64()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((mean - 2.45).abs() < 0.03, "mean {mean}");
        assert!((var.sqrt() - 0.35).abs() < 0.03, "sd {}", var.sqrt());
    }

    #[test]
    fn negative_draws_clip_to_zero() {
        let s = DelaySampler::new(DelaySpec::Normal {
            mean_s: -5.0,
            sd_s: 0.1,
            seed: 1,
        })
        .unwrap();
        assert!((0..10).all(|_| s.sample() == Duration::ZERO));
    }

    #[test]
    fn timeout_fails_slow_draws() {
        let clock = VirtualClock::new();
        let p = with_delay(
            TruncateSummarizer,
            DelaySpec::Fixed { seconds: 2.0 },
            Arc::new(clock.clone()),
        )
        .unwrap()
        .with_timeout(Duration::from_millis(500));
        assert_eq!(
            p.summarize("a", "", 1.0),
            Err(ProviderError::Timeout(Duration::from_millis(500)))
        );
        assert_eq!(clock.now(), Duration::from_millis(500));
    }
}
