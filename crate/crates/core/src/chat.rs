//! Chat-completion contract shared by every backend.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One chat-completion request. Every field takes part in the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub backend_id: String,
    pub model_id: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_output: u32,
    /// Ask for per-token scores so a speak-token score can be extracted.
    #[serde(default)]
    pub want_scores: bool,
}

impl ChatRequest {
    pub fn new(backend_id: &str, model_id: &str, system: String, user: String) -> Self {
        Self {
            backend_id: backend_id.to_string(),
            model_id: model_id.to_string(),
            system,
            user,
            temperature: 0.0,
            max_output: 1024,
            want_scores: false,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_output(mut self, max_output: u32) -> Self {
        self.max_output = max_output;
        self
    }

    pub fn with_scores(mut self, want_scores: bool) -> Self {
        self.want_scores = want_scores;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.system.trim().is_empty() || self.user.trim().is_empty() {
            return Err(BackendError::InvalidRequest(
                "system and user text must be non-empty".into(),
            ));
        }
        if !(self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    /// Log-probability associated with emitting the speak token, when the
    /// backend exposes per-token scores.
    #[serde(default)]
    pub speak_score: Option<f64>,
    #[serde(default)]
    pub cached: bool,
    /// Number of remote attempts spent producing this response (0 on a cache hit).
    #[serde(default)]
    pub attempts: u32,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            speak_score: None,
            cached: false,
            attempts: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("authentication variable `{0}` is not set")]
    AuthMissing(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimitedExhausted { attempts: u32 },
    #[error("remote error: HTTP {status}: {body}")]
    RemoteError { status: u16, body: String },
    #[error("malformed remote payload: {0}")]
    MalformedRemotePayload(String),
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("request does not match any known pipeline stage")]
    UnrecognizedStage,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache failure: {0}")]
    Cache(String),
}

/// Anything that can answer a [`ChatRequest`].
#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;

    /// Like [`complete`](Self::complete) but never served from a cache. Used
    /// when a previous answer to the same request was unusable.
    async fn complete_fresh(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.complete(req).await
    }
}

#[async_trait]
impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(req).await
    }

    async fn complete_fresh(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete_fresh(req).await
    }
}

#[async_trait]
impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(req).await
    }

    async fn complete_fresh(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete_fresh(req).await
    }
}
