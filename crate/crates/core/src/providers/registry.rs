//! Provider descriptors and the id -> backend registry built from them.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::delay::{DelaySpec, Delayed};
use super::http::{HttpProvider, DEFAULT_HTTP_TIMEOUT};
use super::mock::{FixtureRecognizer, MapTranslator, TruncateSummarizer};
use super::{ProviderError, SpeechRecognizer, Summarizer, Translator, DEFAULT_PROMPT_TEMPLATE};
use crate::clock::Clock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Asr,
    Translate,
    Summarize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Mock,
    Http,
}

/// Configuration entry for one backend.
///
/// Recognized `params`:
/// - `endpoint` (http, required), `auth_env` (name of the env var holding the secret), `timeout` (seconds)
/// - `fixed_delay` (seconds) or `delay_mean` + `delay_sd` + `seed`: injected latency
/// - `fixtures` (path to a JSON id -> transcript table) or `fixture_table` (inline object): mock asr
/// - `prompt_template`: summarization prompt, `{user input}` is replaced by the text
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub provider_id: String,
    pub kind: ProviderKind,
    pub mode: ProviderMode,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

const SECRET_MARKERS: [&str; 5] = ["key", "token", "secret", "password", "credential"];

impl ProviderDescriptor {
    pub fn new(provider_id: impl Into<String>, kind: ProviderKind, mode: ProviderMode) -> Self {
        Self {
            provider_id: provider_id.into(),
            kind,
            mode,
            params: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_owned(), value.into());
        self
    }

    /// Replaces the delay seed, if this descriptor draws random delays.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if self.params.contains_key("delay_mean") {
            self.params.insert("seed".into(), seed.into());
        }
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.provider_id.is_empty() {
            return Err(ProviderError::Config("provider_id must not be empty".into()));
        }
        for key in self.params.keys() {
            let lower = key.to_ascii_lowercase();
            if lower != "auth_env" && SECRET_MARKERS.iter().any(|m| lower.contains(m)) {
                return Err(ProviderError::Config(format!(
                    "{}: parameter `{key}` looks like an inline secret; name an environment variable with `auth_env` instead",
                    self.provider_id
                )));
            }
        }
        if self.mode == ProviderMode::Http && self.str_param("endpoint")?.is_none() {
            return Err(ProviderError::Config(format!(
                "{}: http mode requires `endpoint`",
                self.provider_id
            )));
        }
        self.delay_spec()?;
        Ok(())
    }

    fn str_param(&self, key: &str) -> Result<Option<&str>, ProviderError> {
        match self.params.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(self.bad_param(key, other)),
        }
    }

    fn f64_param(&self, key: &str) -> Result<Option<f64>, ProviderError> {
        match self.params.get(key) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| self.bad_param(key, v)),
        }
    }

    fn bad_param(&self, key: &str, value: &Value) -> ProviderError {
        ProviderError::Config(format!("{}: invalid value for `{key}`: {value}", self.provider_id))
    }

    pub fn delay_spec(&self) -> Result<Option<DelaySpec>, ProviderError> {
        let spec = if let Some(seconds) = self.f64_param("fixed_delay")? {
            Some(DelaySpec::Fixed { seconds })
        } else if let Some(mean_s) = self.f64_param("delay_mean")? {
            let sd_s = self.f64_param("delay_sd")?.unwrap_or(0.0);
            let seed = match self.params.get("seed") {
                None => 0,
                Some(v) => v.as_u64().ok_or_else(|| self.bad_param("seed", v))?,
            };
            Some(DelaySpec::Normal { mean_s, sd_s, seed })
        } else {
            None
        };
        if let Some(spec) = &spec {
            spec.validate()?;
        }
        Ok(spec)
    }

    fn timeout(&self) -> Result<Option<Duration>, ProviderError> {
        match self.f64_param("timeout")? {
            None => Ok(None),
            Some(s) if s.is_finite() && s > 0.0 => Ok(Some(Duration::from_secs_f64(s))),
            Some(s) => Err(self.bad_param("timeout", &Value::from(s))),
        }
    }
}

/// Truncating mocks with normally distributed latency, one per reference
/// backend: `(id, mean_s, sd_s)`.
#[allow(clippy::approx_constant)]
pub const TABLE_PRESETS: [(&str, f64, f64); 4] = [
    ("mock-azure", 6.68, 0.612),
    ("mock-pegasus-large", 0.318, 0.0181),
    ("mock-t5-large", 0.332, 0.341),
    ("mock-chatgpt", 2.45, 0.350),
];

/// Descriptors that are always available: zero-latency mocks for each stage
/// plus the delay-injected summarizer presets.
pub fn builtin_descriptors() -> Vec<ProviderDescriptor> {
    let mut out = vec![
        ProviderDescriptor::new("mock-asr", ProviderKind::Asr, ProviderMode::Mock),
        ProviderDescriptor::new("mock-translate", ProviderKind::Translate, ProviderMode::Mock),
        ProviderDescriptor::new("mock-truncate", ProviderKind::Summarize, ProviderMode::Mock),
    ];
    for (id, mean, sd) in TABLE_PRESETS {
        out.push(
            ProviderDescriptor::new(id, ProviderKind::Summarize, ProviderMode::Mock)
                .param("delay_mean", mean)
                .param("delay_sd", sd)
                .param("seed", 0u64),
        );
    }
    out
}

#[derive(Clone)]
pub struct SummarizerEntry {
    pub provider: Arc<dyn Summarizer>,
    pub prompt_template: String,
}

/// Backends by id, one namespace per stage.
#[derive(Clone, Default)]
pub struct ProviderRegistry {
    recognizers: HashMap<String, Arc<dyn SpeechRecognizer>>,
    translators: HashMap<String, Arc<dyn Translator>>,
    summarizers: HashMap<String, SummarizerEntry>,
}

impl std::fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let keys = |m: Vec<&String>| {
            let mut v: Vec<_> = m.into_iter().cloned().collect();
            v.sort();
            v
        };
        f.debug_struct("ProviderRegistry")
            .field("asr", &keys(self.recognizers.keys().collect()))
            .field("translate", &keys(self.translators.keys().collect()))
            .field("summarize", &keys(self.summarizers.keys().collect()))
            .finish()
    }
}

impl ProviderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds the built-in descriptors followed by `descriptors`; later
    /// entries replace earlier ones with the same id and kind.
    pub fn build(
        descriptors: &[ProviderDescriptor],
        clock: Arc<dyn Clock>,
        base_dir: Option<&Path>,
    ) -> Result<Self, ProviderError> {
        let mut registry = Self::new();
        for desc in builtin_descriptors().iter().chain(descriptors) {
            registry.add(desc, clock.clone(), base_dir)?;
        }
        Ok(registry)
    }

    pub fn add(
        &mut self,
        desc: &ProviderDescriptor,
        clock: Arc<dyn Clock>,
        base_dir: Option<&Path>,
    ) -> Result<(), ProviderError> {
        desc.validate()?;
        let delay = desc.delay_spec()?;
        let timeout = desc.timeout()?;
        match desc.kind {
            ProviderKind::Asr => {
                let provider: Arc<dyn SpeechRecognizer> = match desc.mode {
                    ProviderMode::Mock => wrap(load_fixtures(desc, base_dir)?, delay, timeout, clock)?,
                    ProviderMode::Http => wrap(http_provider(desc, timeout)?, delay, None, clock)?,
                };
                self.recognizers.insert(desc.provider_id.clone(), provider);
            }
            ProviderKind::Translate => {
                let provider: Arc<dyn Translator> = match desc.mode {
                    ProviderMode::Mock => wrap(MapTranslator, delay, timeout, clock)?,
                    ProviderMode::Http => wrap(http_provider(desc, timeout)?, delay, None, clock)?,
                };
                self.translators.insert(desc.provider_id.clone(), provider);
            }
            ProviderKind::Summarize => {
                let provider: Arc<dyn Summarizer> = match desc.mode {
                    ProviderMode::Mock => wrap(TruncateSummarizer, delay, timeout, clock)?,
                    ProviderMode::Http => wrap(http_provider(desc, timeout)?, delay, None, clock)?,
                };
                let prompt_template = desc
                    .str_param("prompt_template")?
                    .unwrap_or(DEFAULT_PROMPT_TEMPLATE)
                    .to_owned();
                self.summarizers.insert(
                    desc.provider_id.clone(),
                    SummarizerEntry {
                        provider,
                        prompt_template,
                    },
                );
            }
        }
        Ok(())
    }

    pub fn insert_recognizer(&mut self, id: impl Into<String>, provider: Arc<dyn SpeechRecognizer>) {
        self.recognizers.insert(id.into(), provider);
    }

    pub fn insert_translator(&mut self, id: impl Into<String>, provider: Arc<dyn Translator>) {
        self.translators.insert(id.into(), provider);
    }

    pub fn insert_summarizer(
        &mut self,
        id: impl Into<String>,
        provider: Arc<dyn Summarizer>,
        prompt_template: impl Into<String>,
    ) {
        self.summarizers.insert(
            id.into(),
            SummarizerEntry {
                provider,
                prompt_template: prompt_template.into(),
            },
        );
    }

    pub fn recognizer(&self, id: &str) -> Option<Arc<dyn SpeechRecognizer>> {
        self.recognizers.get(id).cloned()
    }

    pub fn translator(&self, id: &str) -> Option<Arc<dyn Translator>> {
        self.translators.get(id).cloned()
    }

    pub fn summarizer(&self, id: &str) -> Option<SummarizerEntry> {
        self.summarizers.get(id).cloned()
    }
}

trait IntoShared<T: ?Sized> {
    fn into_shared(self) -> Arc<T>;
}

macro_rules! shared_impl {
    ($tr:ident) => {
        impl<P: $tr + 'static> IntoShared<dyn $tr> for P {
            fn into_shared(self) -> Arc<dyn $tr> {
                Arc::new(self)
            }
        }
    };
}
shared_impl!(SpeechRecognizer);
shared_impl!(Translator);
shared_impl!(Summarizer);

fn wrap<P, T: ?Sized>(
    provider: P,
    delay: Option<DelaySpec>,
    timeout: Option<Duration>,
    clock: Arc<dyn Clock>,
) -> Result<Arc<T>, ProviderError>
where
    P: IntoShared<T>,
    Delayed<P>: IntoShared<T>,
{
    let Some(spec) = delay else {
        return Ok(provider.into_shared());
    };
    let mut delayed = Delayed::new(provider, spec, clock)?;
    if let Some(limit) = timeout {
        delayed = delayed.with_timeout(limit);
    }
    Ok(delayed.into_shared())
}

fn http_provider(desc: &ProviderDescriptor, timeout: Option<Duration>) -> Result<HttpProvider, ProviderError> {
    let endpoint = desc
        .str_param("endpoint")?
        .ok_or_else(|| ProviderError::Config(format!("{}: http mode requires `endpoint`", desc.provider_id)))?;
    let auth_env = desc.str_param("auth_env")?.map(str::to_owned);
    HttpProvider::new(endpoint, auth_env, timeout.unwrap_or(DEFAULT_HTTP_TIMEOUT))
}

fn load_fixtures(desc: &ProviderDescriptor, base_dir: Option<&Path>) -> Result<FixtureRecognizer, ProviderError> {
    if let Some(table) = desc.params.get("fixture_table") {
        let table: HashMap<String, String> = serde_json::from_value(table.clone())
            .map_err(|e| ProviderError::Config(format!("{}: fixture_table: {e}", desc.provider_id)))?;
        return Ok(FixtureRecognizer::new(table));
    }
    match desc.str_param("fixtures")? {
        Some(path) => {
            let path = resolve(base_dir, path);
            FixtureRecognizer::from_json_file(&path)
        }
        None => Ok(FixtureRecognizer::default()),
    }
}

fn resolve(base_dir: Option<&Path>, path: &str) -> PathBuf {
    let p = Path::new(path);
    match base_dir {
        Some(base) if p.is_relative() => base.join(p),
        _ => p.to_path_buf(),
    }
}
