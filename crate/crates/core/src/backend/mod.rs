//! Completion backends. Every pipeline stage talks to a [`CompletionBackend`];
//! two implementations ship: an OpenAI-compatible HTTP client and a
//! deterministic rule-based stub for offline runs.

mod http;
pub mod stub;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use stub::StubBackend;

/// Pipeline stage, also used as the stub's dispatch marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Reformulate,
    Generate,
    Reshape,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Reformulate, Stage::Generate, Stage::Reshape];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Reformulate => "reformulate",
            Stage::Generate => "generate",
            Stage::Reshape => "reshape",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s)
    }

    /// Marker line placed in the system prompt, e.g. `#stage:reshape`.
    pub fn marker(self) -> String {
        format!("{}{}", STAGE_MARKER_PREFIX, self.as_str())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const STAGE_MARKER_PREFIX: &str = "#stage:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_name: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.user_prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("user prompt is empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_tokens must be >= 1".into(),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be a non-negative number, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency: Duration,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("server returned status {status} after {attempts} attempt(s): {body_excerpt}")]
    Status {
        status: u16,
        attempts: u32,
        body_excerpt: String,
    },
    #[error("malformed response: {message}; body: {body_excerpt}")]
    Protocol {
        message: String,
        body_excerpt: String,
    },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
}

/// A completion endpoint shared by any number of workers.
pub trait CompletionBackend: Send + Sync {
    /// Identifier recorded in traces. Never contains credentials.
    fn id(&self) -> String;

    /// Performs the call without request validation or the empty-text check.
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        let response = self.send(request)?;
        if response.text.trim().is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        Ok(response)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Stub,
}

/// Backend settings for one stage, as stored in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key, not the key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env_var: Option<String>,
    #[serde(default = "defaults::model")]
    pub model: String,
    #[serde(default = "defaults::max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "defaults::timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "defaults::max_retries")]
    pub max_retries: u32,
    #[serde(default = "defaults::backoff_ms")]
    pub retry_backoff_base_ms: u64,
}

mod defaults {
    pub fn model() -> String {
        "default".into()
    }
    pub fn max_tokens() -> u32 {
        512
    }
    pub fn timeout_ms() -> u64 {
        60_000
    }
    pub fn max_retries() -> u32 {
        2
    }
    pub fn backoff_ms() -> u64 {
        500
    }
}

impl BackendConfig {
    pub fn stub() -> Self {
        Self {
            kind: BackendKind::Stub,
            base_url: None,
            api_key_env_var: None,
            model: "stub".into(),
            max_tokens: defaults::max_tokens(),
            temperature: 0.0,
            timeout_ms: defaults::timeout_ms(),
            max_retries: defaults::max_retries(),
            retry_backoff_base_ms: defaults::backoff_ms(),
        }
    }

    pub fn http(base_url: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            base_url: Some(base_url.into()),
            model: defaults::model(),
            ..Self::stub()
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn retry_backoff_base(&self) -> Duration {
        Duration::from_millis(self.retry_backoff_base_ms)
    }

    /// Every invariant violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.kind == BackendKind::Http {
            match self.base_url.as_deref().map(reqwest::Url::parse) {
                None => out.push("http backend requires base_url".to_string()),
                Some(Err(e)) => out.push(format!("invalid base_url: {e}")),
                Some(Ok(_)) => {}
            }
        }
        if self.timeout_ms == 0 {
            out.push("timeout_ms must be > 0".into());
        }
        if self.max_tokens == 0 {
            out.push("max_tokens must be >= 1".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            out.push("temperature must be a non-negative number".into());
        }
        out
    }

    pub fn build(&self) -> Result<StageBackend, Vec<String>> {
        let violations = self.violations();
        if !violations.is_empty() {
            return Err(violations);
        }
        let backend: Arc<dyn CompletionBackend> = match self.kind {
            BackendKind::Stub => Arc::new(StubBackend),
            BackendKind::Http => Arc::new(HttpBackend::new(self).map_err(|e| vec![e])?),
        };
        Ok(StageBackend {
            backend,
            model: self.model.clone(),
            max_tokens: self.max_tokens,
            temperature: self.temperature,
        })
    }
}

/// A backend handle plus the request parameters used for one stage.
#[derive(Clone)]
pub struct StageBackend {
    pub backend: Arc<dyn CompletionBackend>,
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl StageBackend {
    pub fn stub() -> Self {
        BackendConfig::stub().build().expect("stub config is valid")
    }

    pub fn request(&self, system_prompt: String, user_prompt: String) -> CompletionRequest {
        CompletionRequest {
            model_name: self.model.clone(),
            system_prompt,
            user_prompt,
            max_tokens: self.max_tokens,
            temperature: self.temperature,
        }
    }
}

impl fmt::Debug for StageBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StageBackend")
            .field("backend", &self.backend.id())
            .field("model", &self.model)
            .finish()
    }
}
