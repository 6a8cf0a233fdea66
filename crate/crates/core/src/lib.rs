//! Building blocks for teaching a conversational agent *when* to speak in a
//! multi-party discussion.
//!
//! The crate covers the whole offline toolchain:
//!
//! - [`corpus`]: ingest and clean grounded question/answer rows.
//! - [`scenario`]: prompt for and parse a social context plus intervention type.
//! - [`transcript`]: sample generation controls, prompt for, parse and validate
//!   multi-party transcripts with an embedded `[AGENT]`.
//! - [`dataset`]: turn transcripts into sliding-window SPEAK/SILENT examples,
//!   split them by conversation and write line-delimited JSON.
//! - [`stats`]: corpus-level intervention statistics.
//! - [`metrics`]: confusion counts, Macro F1, FIR, MIR and ROUGE-L.
//! - [`reward`]: asymmetric rollout reward, group-normalized advantages,
//!   balanced batching, threshold calibration and ablation aggregation.
//! - [`chat`]: the request/response contract implemented by chat backends.
//!
//! Nothing in here performs network I/O directly; stages that need a language
//! model are generic over [`chat::ChatBackend`].

pub mod chat;
pub mod corpus;
pub mod dataset;
pub mod jsonl;
pub mod metrics;
pub mod reward;
pub mod scenario;
pub mod stats;
pub mod template;
pub mod transcript;

pub use chat::{BackendError, ChatBackend, ChatRequest, ChatResponse};
pub use dataset::{DecisionLabel, Split, Variant, WindowExample};
pub use scenario::{InterventionType, Scenario};
pub use transcript::{Speaker, Transcript, Turn};

/// Token the agent emits to stay silent.
pub const SILENT_TOKEN: &str = ">";
/// Token that replaces every agent utterance in the token-variant dataset.
pub const SPEAK_TOKEN: &str = "<";
/// Speaker tag used for the embedded agent.
pub const AGENT_TAG: &str = "[AGENT]";

/// SplitMix64 finalizer, used to derive independent per-item seeds from a run seed.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
