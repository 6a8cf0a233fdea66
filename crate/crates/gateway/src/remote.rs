//! Remote backend: auth, rate limiting, in-flight bound and retries.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use speakgate_core::{BackendError, ChatBackend, ChatRequest, ChatResponse};
use tokio::sync::Semaphore;

use crate::clock::{Clock, TokioClock};
use crate::config::BackendConfig;
use crate::limiter::RateLimiter;
use crate::transport::{parse_completion, HttpTransport, Transport, TransportError, WireRequest};

type SecretLookup = Arc<dyn Fn(&str) -> Option<String> + Send + Sync>;

pub struct RemoteBackend<T, C = TokioClock> {
    config: BackendConfig,
    transport: T,
    clock: C,
    limiter: RateLimiter,
    in_flight: Semaphore,
    secrets: SecretLookup,
}

impl RemoteBackend<HttpTransport, TokioClock> {
    /// HTTPS backend reading its key from the process environment.
    pub fn http(config: BackendConfig) -> Result<Self, BackendError> {
        config
            .validate()
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let transport = HttpTransport::new(&config.endpoint, Duration::from_secs_f64(config.timeout_secs))?;
        Ok(Self::with_parts(config, transport, TokioClock::default()))
    }
}

impl<T: Transport, C: Clock> RemoteBackend<T, C> {
    pub fn with_parts(config: BackendConfig, transport: T, clock: C) -> Self {
        let limiter = RateLimiter::new(config.requests_per_minute, &clock);
        let in_flight = Semaphore::new(config.max_in_flight.max(1));
        Self {
            config,
            transport,
            clock,
            limiter,
            in_flight,
            secrets: Arc::new(|name| std::env::var(name).ok().filter(|v| !v.is_empty())),
        }
    }

    /// Replace the environment lookup used to resolve the auth variable.
    pub fn with_secret_lookup(mut self, lookup: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        self.secrets = Arc::new(lookup);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn clock(&self) -> &C {
        &self.clock
    }

    fn api_key(&self) -> Result<Option<String>, BackendError> {
        match &self.config.auth {
            None => Ok(None),
            Some(var) => (self.secrets)(var)
                .map(Some)
                .ok_or_else(|| BackendError::AuthMissing(var.clone())),
        }
    }

    async fn attempt(&self, body: &WireRequest, key: Option<&str>) -> Result<serde_json::Value, TransportError> {
        self.limiter.acquire(&self.clock).await;
        let _permit = self.in_flight.acquire().await.expect("semaphore is never closed");
        self.transport.send(body, key).await
    }
}

#[async_trait]
impl<T: Transport, C: Clock> ChatBackend for RemoteBackend<T, C> {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        let key = self.api_key()?;
        let body = WireRequest::from_chat(req);
        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(&body, key.as_deref()).await {
                Ok(payload) => {
                    let (text, speak_score) = parse_completion(&payload)?;
                    return Ok(ChatResponse {
                        text,
                        speak_score,
                        cached: false,
                        attempts: attempt,
                    });
                }
                Err(err) if err.is_transient() && attempt < max_attempts => {
                    self.clock.sleep(self.config.retry.backoff(attempt)).await;
                }
                Err(TransportError::Status { status: 429, .. }) => {
                    return Err(BackendError::RateLimitedExhausted { attempts: attempt });
                }
                Err(TransportError::Status { status, body }) => {
                    return Err(BackendError::RemoteError { status, body });
                }
                Err(TransportError::Network(message)) => {
                    return Err(BackendError::Transport {
                        attempts: attempt,
                        message,
                    });
                }
            }
        }
    }
}
