//! Run configuration: one TOML file, every key optional.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use speakgate_core::corpus::CorpusLayout;
use speakgate_core::dataset::SplitRatios;
use speakgate_core::metrics::{DecisionMode, ParseFailurePolicy};
use speakgate_core::reward::RewardConfig;
use speakgate_gateway::BackendConfig;
use thiserror::Error;

/// Name of the built-in offline backend.
pub const MOCK_BACKEND: &str = "mock";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// `mock` or a key of `backends`.
    pub backend: String,
    /// Concurrent requests issued by a stage.
    pub parallelism: usize,
    /// Put the on-disk response cache in front of the backend.
    pub cache: bool,
    /// Defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub corpus: CorpusSection,
    pub generation: GenerationSection,
    pub dataset: DatasetSection,
    pub evaluation: EvaluationSection,
    pub reward: RewardSection,
    pub backends: BTreeMap<String, BackendConfig>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("speakgate-out"),
            backend: MOCK_BACKEND.into(),
            parallelism: 8,
            cache: true,
            cache_dir: None,
            corpus: CorpusSection::default(),
            generation: GenerationSection::default(),
            dataset: DatasetSection::default(),
            evaluation: EvaluationSection::default(),
            reward: RewardSection::default(),
            backends: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Source CSV. When unset, the bundled 64-row fixture is used.
    pub path: Option<PathBuf>,
    pub leading_columns: usize,
    pub has_header: bool,
    pub delimiter: char,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let layout = CorpusLayout::default();
        Self {
            path: None,
            leading_columns: layout.leading_columns,
            has_header: layout.has_header,
            delimiter: layout.delimiter as char,
        }
    }
}

impl CorpusSection {
    pub fn layout(&self) -> CorpusLayout {
        CorpusLayout {
            leading_columns: self.leading_columns,
            has_header: self.has_header,
            delimiter: self.delimiter as u8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub conversations: usize,
    pub scenario_model: String,
    pub scenario_temperature: f64,
    pub scenario_max_output: u32,
    pub transcript_model: String,
    pub transcript_temperature: f64,
    pub transcript_max_output: u32,
    /// Re-requests after an unusable response.
    pub max_retries: u32,
}

impl Default for GenerationSection {
    fn default() -> Self {
        Self {
            conversations: 50,
            scenario_model: "gpt-4o-mini".into(),
            scenario_temperature: 0.7,
            scenario_max_output: 256,
            transcript_model: "gpt-4-turbo-preview".into(),
            transcript_temperature: 0.9,
            transcript_max_output: 4096,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub window: usize,
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let r = SplitRatios::default();
        Self {
            window: speakgate_core::dataset::DEFAULT_WINDOW,
            train: r.train,
            validation: r.validation,
            test: r.test,
        }
    }
}

impl DatasetSection {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train,
            validation: self.validation,
            test: self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub model: String,
    pub mode: DecisionMode,
    /// `count-as-silent` or `exclude`.
    pub parse_failures: ParseFailurePolicy,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            model: "gpt-4o-mini".into(),
            mode: DecisionMode::Token,
            parse_failures: ParseFailurePolicy::CountAsSilent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub lambda: f64,
    /// `all`, `acc`, `acc+soft` or `acc+soft+type`.
    pub components: String,
    pub group_size: usize,
    pub judge_model: String,
    pub fir_target: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            components: "all".into(),
            group_size: speakgate_core::reward::DEFAULT_GROUP_SIZE,
            judge_model: "gpt-4o-mini".into(),
            fir_target: 0.10,
        }
    }
}

impl RewardSection {
    pub fn reward_config(&self) -> Result<RewardConfig, ConfigError> {
        RewardConfig::preset(&self.components, self.lambda).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.parallelism < 1 {
            return bad("parallelism must be >= 1".into());
        }
        if self.backend != MOCK_BACKEND && !self.backends.contains_key(&self.backend) {
            return bad(format!("backend `{}` is neither `mock` nor a [backends] entry", self.backend));
        }
        for (name, b) in &self.backends {
            b.validate().map_err(|e| ConfigError::Invalid(format!("backends.{name}: {e}")))?;
        }
        if !self.corpus.delimiter.is_ascii() {
            return bad("corpus.delimiter must be a single ASCII character".into());
        }
        if self.generation.conversations < 1 {
            return bad("generation.conversations must be >= 1".into());
        }
        for (key, t) in [
            ("generation.scenario_temperature", self.generation.scenario_temperature),
            ("generation.transcript_temperature", self.generation.transcript_temperature),
        ] {
            if !(t >= 0.0 && t.is_finite()) {
                return bad(format!("{key} must be >= 0"));
            }
        }
        if self.dataset.window < 1 {
            return bad("dataset.window must be >= 1".into());
        }
        let r = self.dataset.ratios().as_array();
        if r.iter().any(|x| !(*x >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("dataset split ratios must be >= 0 and sum to 1, got {r:?}"));
        }
        self.reward.reward_config()?;
        if self.reward.group_size < 2 {
            return bad("reward.group_size must be >= 2".into());
        }
        if !(0.0..=1.0).contains(&self.reward.fir_target) {
            return bad("reward.fir_target must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    /// Hex sha256 of the effective configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_value(self)
            .and_then(|v| serde_json::to_string(&v))
            .expect("config always serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let c: Config = toml::from_str("").unwrap();
        assert_eq!(c, Config::default());
        c.validate().unwrap();
    }

    #[test]
    fn full_file_parses() {
        let text = r#"
            seed = 11
            out_dir = "runs/a"
            backend = "openai"
            parallelism = 4

            [corpus]
            path = "data/yahoo.csv"

            [generation]
            conversations = 200
            transcript_temperature = 1.0

            [dataset]
            window = 6

            [evaluation]
            mode = "dialogue"
            parse_failures = "exclude"

            [reward]
            lambda = 1.0
            components = "acc+soft"

            [backends.openai]
            endpoint = "https://api.openai.com/v1/chat/completions"
            auth = "OPENAI_API_KEY"
            max_in_flight = 4
            requests_per_minute = 60
            retry = { max_attempts = 5, base_backoff_secs = 2.0 }
        "#;
        let c: Config = toml::from_str(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.dataset.window, 6);
        assert_eq!(c.evaluation.mode, DecisionMode::Dialogue);
        assert_eq!(c.backends["openai"].retry.max_attempts, 5);
        assert_eq!(c.cache_dir(), PathBuf::from("runs/a/cache"));
    }

    #[test]
    fn rejects_bad_values() {
        let unknown: Result<Config, _> = toml::from_str("sed = 3");
        assert!(unknown.is_err());
        for text in [
            "backend = \"nowhere\"",
            "parallelism = 0",
            "[dataset]\ntrain = 0.5",
            "[reward]\ncomponents = \"soft\"",
            "[reward]\nlambda = -1.0",
            "[reward]\ngroup_size = 1",
        ] {
            let c: Config = toml::from_str(text).unwrap();
            assert!(c.validate().is_err(), "{text}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::default();
        let b = Config { seed: 8, ..Config::default() };
        assert_eq!(a.hash(), Config::default().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
