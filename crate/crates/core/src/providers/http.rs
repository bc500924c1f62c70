//! Generic JSON-over-HTTP adapter for external engines.
//!
//! Every call is a `POST` to the configured endpoint. Request bodies:
//!
//! | stage     | body                                                  |
//! |-----------|-------------------------------------------------------|
//! | asr       | `{"audio": {"fixture": id}}` or `{"audio": {"base64": b64}}` |
//! | translate | `{"text": ..., "src": ..., "tgt": ...}`               |
//! | summarize | `{"prompt": ..., "target_sigma": ...}`                |
//!
//! Every response body is `{"text": ...}`. When `auth_env` is set, the value
//! of that environment variable is sent as `Authorization: Bearer <value>`;
//! the secret itself is never stored in the adapter or in configuration.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{build_prompt, AudioRef, ProviderError, SpeechRecognizer, Summarizer, Translator};

pub const DEFAULT_HTTP_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Serialize)]
struct AsrRequest<'a> {
    audio: &'a AudioRef,
}

#[derive(Debug, Serialize)]
struct TranslateRequest<'a> {
    text: &'a str,
    src: &'a str,
    tgt: &'a str,
}

#[derive(Debug, Serialize)]
struct SummarizeRequest<'a> {
    prompt: &'a str,
    target_sigma: f64,
}

#[derive(Debug, Deserialize)]
struct TextResponse {
    text: String,
}

#[derive(Clone)]
pub struct HttpProvider {
    endpoint: String,
    auth_env: Option<String>,
    timeout: Duration,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("endpoint", &self.endpoint)
            .field("auth_env", &self.auth_env)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl HttpProvider {
    pub fn new(
        endpoint: impl Into<String>,
        auth_env: Option<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        let endpoint = endpoint.into();
        if endpoint.is_empty() {
            return Err(ProviderError::Config("http provider requires an endpoint".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Ok(Self {
            endpoint,
            auth_env,
            timeout,
            agent,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn post<B: Serialize>(&self, body: &B) -> Result<String, ProviderError> {
        let mut request = self.agent.post(&self.endpoint);
        if let Some(var) = &self.auth_env {
            let secret = std::env::var(var)
                .map_err(|_| ProviderError::Config(format!("auth environment variable {var} is not set")))?;
            request = request.header("Authorization", format!("Bearer {secret}"));
        }
        let mut response = request.send_json(body).map_err(|e| self.map_error(e))?;
        let parsed: TextResponse = response.body_mut().read_json().map_err(|e| self.map_error(e))?;
        Ok(parsed.text)
    }

    fn map_error(&self, err: ureq::Error) -> ProviderError {
        match err {
            ureq::Error::Timeout(_) => ProviderError::Timeout(self.timeout),
            other => ProviderError::Http(other.to_string()),
        }
    }
}

impl SpeechRecognizer for HttpProvider {
    fn transcribe(&self, audio: &AudioRef) -> Result<String, ProviderError> {
        self.post(&AsrRequest { audio })
    }
}

impl Translator for HttpProvider {
    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        self.post(&TranslateRequest { text, src, tgt })
    }
}

impl Summarizer for HttpProvider {
    fn summarize(&self, text: &str, template: &str, target_sigma: f64) -> Result<String, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let prompt = build_prompt(template, text);
        self.post(&SummarizeRequest {
            prompt: &prompt,
            target_sigma,
        })
    }
}
