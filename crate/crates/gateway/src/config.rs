//! Per-backend connection settings.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each further failure.
    pub base_backoff_secs: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff_secs: 1.0,
        }
    }
}

impl RetryPolicy {
    /// Delay after failed attempt number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 2f64.powi(attempt.saturating_sub(1).min(30) as i32);
        Duration::from_secs_f64(self.base_backoff_secs * factor)
    }
}

/// Connection settings for one OpenAI-compatible endpoint. Holds the *name*
/// of the environment variable carrying the key, never the key itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint: String,
    /// Environment variable holding the bearer token; `None` for endpoints
    /// that need no auth.
    #[serde(default)]
    pub auth: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_in_flight() -> usize {
    8
}

fn default_rpm() -> u32 {
    500
}

fn default_timeout() -> f64 {
    120.0
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid backend config: {0}")]
pub struct ConfigError(pub String);

impl BackendConfig {
    pub fn new(endpoint: &str) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            auth: None,
            max_in_flight: default_in_flight(),
            requests_per_minute: default_rpm(),
            retry: RetryPolicy::default(),
            cache_dir: None,
            timeout_secs: default_timeout(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.endpoint.trim().is_empty() {
            return Err(ConfigError("endpoint must be set".into()));
        }
        if self.max_in_flight < 1 {
            return Err(ConfigError("max_in_flight must be >= 1".into()));
        }
        if self.requests_per_minute < 1 {
            return Err(ConfigError("requests_per_minute must be >= 1".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(ConfigError("retry.max_attempts must be >= 1".into()));
        }
        if !(self.retry.base_backoff_secs >= 0.0 && self.retry.base_backoff_secs.is_finite()) {
            return Err(ConfigError("retry.base_backoff_secs must be a finite value >= 0".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(ConfigError("timeout_secs must be > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_backoff_secs: 0.5,
        };
        let got: Vec<f64> = (1..=4).map(|a| p.backoff(a).as_secs_f64()).collect();
        assert_eq!(got, vec![0.5, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn rejects_zero_in_flight() {
        let mut c = BackendConfig::new("https://example.invalid/v1/chat/completions");
        assert!(c.validate().is_ok());
        c.max_in_flight = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_fields_take_defaults() {
        let c: BackendConfig = serde_json::from_str(r#"{"endpoint":"http://localhost:8000","auth":"KEY"}"#).unwrap();
        assert_eq!(c.max_in_flight, 8);
        assert_eq!(c.retry.max_attempts, 3);
        assert_eq!(c.auth.as_deref(), Some("KEY"));
    }
}
