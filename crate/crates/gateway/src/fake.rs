//! Scripted transport for exercising the remote backend without a network.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use async_trait::async_trait;
use serde_json::{json, Value};

use crate::transport::{Transport, TransportError, WireRequest};

/// Replays a script of replies in order, then repeats `fallback` (if any).
/// Records every request body and the peak number of concurrent sends.
#[derive(Debug, Default)]
pub struct ScriptedTransport {
    script: Mutex<VecDeque<Result<Value, TransportError>>>,
    fallback: Option<Result<Value, TransportError>>,
    seen: Mutex<Vec<(WireRequest, Option<String>)>>,
    current: AtomicUsize,
    peak: AtomicUsize,
    /// Cooperative yields while a send is outstanding, to let other tasks in.
    hold_yields: usize,
}

/// A successful chat-completions reply with the given text.
pub fn reply(text: &str) -> Value {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]})
}

pub fn status(code: u16) -> TransportError {
    TransportError::Status {
        status: code,
        body: format!("scripted status {code}"),
    }
}

impl ScriptedTransport {
    pub fn new(script: impl IntoIterator<Item = Result<Value, TransportError>>) -> Self {
        Self {
            script: Mutex::new(script.into_iter().collect()),
            ..Self::default()
        }
    }

    /// Answer every request with the same reply.
    pub fn always(reply: Value) -> Self {
        Self {
            fallback: Some(Ok(reply)),
            ..Self::default()
        }
    }

    pub fn holding(mut self, yields: usize) -> Self {
        self.hold_yields = yields;
        self
    }

    pub fn calls(&self) -> usize {
        self.seen.lock().unwrap().len()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<(WireRequest, Option<String>)> {
        self.seen.lock().unwrap().clone()
    }
}

#[async_trait]
impl Transport for ScriptedTransport {
    async fn send(&self, body: &WireRequest, api_key: Option<&str>) -> Result<Value, TransportError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.seen.lock().unwrap().push((body.clone(), api_key.map(str::to_string)));
        for _ in 0..self.hold_yields {
            tokio::task::yield_now().await;
        }
        let next = self.script.lock().unwrap().pop_front();
        self.current.fetch_sub(1, Ordering::SeqCst);
        next.or_else(|| self.fallback.clone())
            .unwrap_or_else(|| Err(TransportError::Network("script exhausted".into())))
    }
}
