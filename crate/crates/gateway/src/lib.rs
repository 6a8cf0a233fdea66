//! Chat-completion backends for the pipeline stages.
//!
//! - [`RemoteBackend`] talks to an OpenAI-compatible endpoint with a token-bucket
//!   rate limit, a bound on in-flight requests and exponential-backoff retries.
//! - [`CachedBackend`] puts a persistent on-disk response cache in front of any
//!   backend.
//! - [`MockBackend`] answers every stage deterministically without a network.
//!
//! Time is abstracted behind [`Clock`] so that retry and rate-limit behavior
//! can be driven by a [`VirtualClock`] in tests, and the network behind
//! [`Transport`] so that a [`ScriptedTransport`] can stand in for a server.

pub mod cache;
pub mod clock;
pub mod config;
pub mod fake;
pub mod limiter;
pub mod mock;
pub mod remote;
pub mod transport;

pub use cache::{request_key, CachedBackend, ResponseCache};
pub use clock::{Clock, TokioClock, VirtualClock};
pub use config::{BackendConfig, ConfigError, RetryPolicy};
pub use fake::ScriptedTransport;
pub use limiter::{RateLimiter, TokenBucket};
pub use mock::{detect_stage, MockBackend, Stage};
pub use remote::RemoteBackend;
pub use transport::{HttpTransport, Transport, TransportError, WireRequest};
