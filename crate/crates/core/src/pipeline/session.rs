use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};

use super::{Caption, Pipeline, PipelineError, ReorderBuffer, SessionConfig, SessionConfigPatch, Utterance};
use crate::providers::AudioRef;

#[derive(Debug, Clone, PartialEq)]
pub enum JobInput {
    Audio(AudioRef),
    /// An already recognized transcript; ASR time is reported as zero.
    Transcript {
        text: String,
        silence: bool,
    },
}

/// An ingested utterance waiting to be processed. Carries the configuration
/// that was current at ingestion time.
#[derive(Debug, Clone)]
pub struct Job {
    pub utterance_id: u64,
    pub speaker_label: String,
    pub input: JobInput,
    pub config: SessionConfig,
    pub received_at: f64,
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Emission {
    /// A finished caption with the configuration it was produced under.
    Caption {
        caption: Caption,
        config: SessionConfig,
    },
    Skipped {
        utterance_id: u64,
    },
    Failed {
        utterance_id: u64,
        error: PipelineError,
    },
}

impl Emission {
    pub fn utterance_id(&self) -> u64 {
        match self {
            Emission::Caption { caption, .. } => caption.utterance_id,
            Emission::Skipped { utterance_id } | Emission::Failed { utterance_id, .. } => *utterance_id,
        }
    }
}

type Sink = Box<dyn Fn(Emission) + Send + Sync>;

/// Thread-safe per-session front end to a [`Pipeline`].
///
/// Utterances may be processed concurrently, but the sink sees exactly one
/// emission per ingested utterance, in ingestion order. The sink is called
/// with the ordering lock held and must not block.
pub struct SessionRunner {
    session_id: String,
    pipeline: Arc<Pipeline>,
    config: Mutex<SessionConfig>,
    order: Mutex<ReorderBuffer<Emission>>,
    sink: Sink,
}

impl SessionRunner {
    pub fn new(
        session_id: impl Into<String>,
        pipeline: Arc<Pipeline>,
        config: SessionConfig,
        sink: impl Fn(Emission) + Send + Sync + 'static,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            session_id: session_id.into(),
            pipeline,
            config: Mutex::new(config),
            order: Mutex::new(ReorderBuffer::default()),
            sink: Box::new(sink),
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn pipeline(&self) -> &Arc<Pipeline> {
        &self.pipeline
    }

    pub fn config(&self) -> SessionConfig {
        self.config.lock().expect("config poisoned").clone()
    }

    /// Applies `patch` if the result validates. Only utterances ingested
    /// afterwards see the change.
    pub fn update_config(&self, patch: &SessionConfigPatch) -> Result<SessionConfig, PipelineError> {
        let mut current = self.config.lock().expect("config poisoned");
        let mut next = current.clone();
        next.apply(patch);
        next.validate()?;
        *current = next.clone();
        Ok(next)
    }

    pub fn ingest(&self, speaker_label: impl Into<String>, input: JobInput) -> Job {
        let mut order = self.order.lock().expect("order poisoned");
        let utterance_id = order.reserve();
        Job {
            utterance_id,
            speaker_label: speaker_label.into(),
            input,
            config: self.config(),
            received_at: self.pipeline.clock().now().as_secs_f64(),
        }
    }

    pub fn in_flight(&self) -> u64 {
        self.order.lock().expect("order poisoned").in_flight()
    }

    /// Processes `job` on the calling thread and releases whatever emissions
    /// became deliverable.
    pub fn run(&self, job: Job) {
        let utterance_id = job.utterance_id;
        let config = job.config.clone();
        let outcome = catch_unwind(AssertUnwindSafe(|| self.process(job)))
            .unwrap_or_else(|_| Err(PipelineError::Config("provider panicked".into())));
        let emission = match outcome {
            Ok(caption) => Emission::Caption { caption, config },
            Err(PipelineError::Skipped(_)) => Emission::Skipped { utterance_id },
            Err(error) => Emission::Failed { utterance_id, error },
        };
        let mut order = self.order.lock().expect("order poisoned");
        for ready in order.complete(utterance_id, emission) {
            (self.sink)(self.record(ready));
        }
    }

    /// Runs `job` on a new thread.
    pub fn spawn(self: &Arc<Self>, job: Job) -> std::thread::JoinHandle<()> {
        let runner = Arc::clone(self);
        std::thread::spawn(move || runner.run(job))
    }

    /// Stores a released caption so record ids follow ingestion order.
    fn record(&self, emission: Emission) -> Emission {
        match emission {
            Emission::Caption { mut caption, config } => match self.pipeline.record(&mut caption, &config) {
                Ok(()) => Emission::Caption { caption, config },
                Err(error) => Emission::Failed {
                    utterance_id: caption.utterance_id,
                    error,
                },
            },
            other => other,
        }
    }

    fn process(&self, job: Job) -> Result<Caption, PipelineError> {
        let cfg = &job.config;
        let (text, silence, asr_s) = match &job.input {
            JobInput::Audio(audio) => {
                let (text, secs) = self.pipeline.recognize(audio, cfg)?;
                (text, false, secs)
            }
            JobInput::Transcript { text, silence } => (text.clone(), *silence, 0.0),
        };
        if text.trim().is_empty() || silence {
            return Err(PipelineError::Skipped(job.utterance_id));
        }
        let utterance = Utterance {
            utterance_id: job.utterance_id,
            session_id: self.session_id.clone(),
            speaker_label: job.speaker_label,
            source_lang: cfg.source_lang.clone(),
            text,
            silence,
            received_at: job.received_at,
        };
        self.pipeline.caption_utterance(&utterance, cfg, asr_s)
    }
}
