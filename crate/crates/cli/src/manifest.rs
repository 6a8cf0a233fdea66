//! Per-run provenance record.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub backend: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub record_counts: BTreeMap<String, u64>,
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(subcommand: &str, config_hash: &str, seed: u64, backend: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            seed,
            backend: backend.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_ms: unix_ms(),
            finished_unix_ms: 0,
            record_counts: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, p: impl AsRef<Path>) {
        self.inputs.push(p.as_ref().to_path_buf());
    }

    pub fn output(&mut self, p: impl AsRef<Path>) {
        self.outputs.push(p.as_ref().to_path_buf());
    }

    pub fn count(&mut self, key: &str, n: u64) {
        *self.record_counts.entry(key.to_string()).or_insert(0) += n;
    }

    pub fn absorb(&mut self, other: &RunManifest) {
        self.inputs.extend(other.inputs.iter().cloned());
        self.outputs.extend(other.outputs.iter().cloned());
        for (k, v) in &other.record_counts {
            self.count(&format!("{}.{k}", other.subcommand), *v);
        }
    }

    pub fn finish(mut self) -> Self {
        self.finished_unix_ms = unix_ms();
        self
    }
}
