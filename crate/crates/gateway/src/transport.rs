//! OpenAI-compatible wire format and the transports that carry it.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use speakgate_core::{BackendError, ChatRequest, SPEAK_TOKEN};

/// Alternatives requested per position when scores are wanted.
pub const TOP_LOGPROBS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completions request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub model: String,
    pub messages: Vec<WireMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub logprobs: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub top_logprobs: Option<u32>,
}

impl WireRequest {
    pub fn from_chat(req: &ChatRequest) -> Self {
        Self {
            model: req.model_id.clone(),
            messages: vec![
                WireMessage {
                    role: "system".into(),
                    content: req.system.clone(),
                },
                WireMessage {
                    role: "user".into(),
                    content: req.user.clone(),
                },
            ],
            temperature: req.temperature,
            max_tokens: req.max_output,
            logprobs: req.want_scores,
            top_logprobs: req.want_scores.then_some(TOP_LOGPROBS),
        }
    }
}

/// Failure of a single transport attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    /// The server answered with a non-success status.
    Status { status: u16, body: String },
    /// Connection, TLS or timeout failure; no usable answer.
    Network(String),
}

impl TransportError {
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::Network(_) => true,
        }
    }
}

/// Sends one request body and returns the raw JSON reply. `api_key` is
/// attached as a bearer token when present.
#[async_trait]
pub trait Transport: Send + Sync {
    async fn send(&self, body: &WireRequest, api_key: Option<&str>) -> Result<Value, TransportError>;
}

/// HTTPS transport over reqwest.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: reqwest::Client,
    endpoint: String,
}

impl HttpTransport {
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::InvalidRequest(format!("http client: {e}")))?;
        Ok(Self {
            client,
            endpoint: endpoint.to_string(),
        })
    }
}

#[async_trait]
impl Transport for HttpTransport {
    async fn send(&self, body: &WireRequest, api_key: Option<&str>) -> Result<Value, TransportError> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| TransportError::Network(e.without_url().to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| TransportError::Network(e.without_url().to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Status {
                status: status.as_u16(),
                body: truncate(&text, 512),
            });
        }
        serde_json::from_str(&text).map_err(|e| TransportError::Status {
            status: status.as_u16(),
            body: format!("unparseable body: {e}"),
        })
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

/// Completion text and optional speak-token score from a reply body.
pub fn parse_completion(body: &Value) -> Result<(String, Option<f64>), BackendError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::MalformedRemotePayload("no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::MalformedRemotePayload("choice has no message content".into()))?;
    Ok((text.to_string(), speak_score(choice)))
}

/// Score of the speak token at the first generated position: the chosen
/// token's log-probability when it is the speak token, otherwise the score of
/// the speak-token alternative at that position. `None` without scores.
pub fn speak_score(choice: &Value) -> Option<f64> {
    let first = choice.pointer("/logprobs/content/0")?;
    let is_speak = |v: &Value| v.get("token").and_then(Value::as_str).map(str::trim) == Some(SPEAK_TOKEN);
    if is_speak(first) {
        return first.get("logprob").and_then(Value::as_f64);
    }
    first
        .get("top_logprobs")?
        .as_array()?
        .iter()
        .find(|alt| is_speak(alt))?
        .get("logprob")
        .and_then(Value::as_f64)
}
