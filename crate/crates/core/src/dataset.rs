//! Sliding-window decision examples, target variants, conversation-level
//! splits and JSONL serialization.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::scenario::InterventionType;
use crate::stats::detect_direct_address;
use crate::transcript::{Speaker, Transcript, Turn};
use crate::{SILENT_TOKEN, SPEAK_TOKEN};

pub const DEFAULT_WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DecisionLabel {
    Speak,
    Silent,
}

impl DecisionLabel {
    pub fn from_agent_text(text: &str) -> Self {
        if text.trim() == SILENT_TOKEN {
            DecisionLabel::Silent
        } else {
            DecisionLabel::Speak
        }
    }

    pub fn is_speak(self) -> bool {
        self == DecisionLabel::Speak
    }
}

impl fmt::Display for DecisionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecisionLabel::Speak => "SPEAK",
            DecisionLabel::Silent => "SILENT",
        })
    }
}

/// One agent decision point with the messages that preceded it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowExample {
    pub conversation_id: String,
    /// Position among the conversation's agent turns.
    pub decision_index: usize,
    pub context: Vec<Turn>,
    pub label: DecisionLabel,
    pub gold_utterance: Option<String>,
    pub directly_addressed: bool,
    /// The conversation's scenario type, attached to SPEAK decisions.
    pub intervention_type: Option<InterventionType>,
}

/// One example per agent turn. Context is up to `window_size` turns
/// immediately preceding it, agent turns included. Agent turns with nothing
/// before them produce no example.
pub fn build_windows(t: &Transcript, window_size: usize) -> Vec<WindowExample> {
    let mut out = Vec::new();
    let mut decision_index = 0;
    for (i, turn) in t.turns.iter().enumerate() {
        if !turn.speaker.is_agent() {
            continue;
        }
        let index = decision_index;
        decision_index += 1;
        if i == 0 || window_size == 0 {
            continue;
        }
        let context = t.turns[i.saturating_sub(window_size)..i].to_vec();
        let label = DecisionLabel::from_agent_text(&turn.text);
        let speak = label.is_speak();
        out.push(WindowExample {
            conversation_id: t.conversation_id.clone(),
            decision_index: index,
            directly_addressed: detect_direct_address(&context),
            context,
            label,
            gold_utterance: speak.then(|| turn.text.clone()),
            intervention_type: speak.then_some(t.scenario.intervention_type),
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Token,
    Dialogue,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Token, Variant::Dialogue];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Token => "token",
            Variant::Dialogue => "dialogue",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "token" => Ok(Variant::Token),
            "dialogue" => Ok(Variant::Dialogue),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantTarget {
    pub variant: Variant,
    pub target_text: String,
}

pub fn render_target(e: &WindowExample, variant: Variant) -> VariantTarget {
    let target_text = match (e.label, variant) {
        (DecisionLabel::Silent, _) => SILENT_TOKEN.to_string(),
        (DecisionLabel::Speak, Variant::Token) => SPEAK_TOKEN.to_string(),
        (DecisionLabel::Speak, Variant::Dialogue) => e.gold_utterance.clone().unwrap_or_default(),
    };
    VariantTarget {
        variant,
        target_text,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    /// Allocation order used by [`split_conversations`].
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub ratios: SplitRatios,
    pub seed: u64,
    pub assignments: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn split_of(&self, conversation_id: &str) -> Option<Split> {
        self.assignments.get(conversation_id).copied()
    }

    pub fn sizes(&self) -> BTreeMap<Split, usize> {
        let mut sizes: BTreeMap<Split, usize> = Split::ALL.iter().map(|s| (*s, 0)).collect();
        for split in self.assignments.values() {
            *sizes.entry(*split).or_default() += 1;
        }
        sizes
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no conversations to split")]
    EmptyCorpus,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("duplicate conversation id `{0}`")]
    DuplicateId(String),
    #[error("conversation `{0}` has no split assignment")]
    Unassigned(String),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

/// Split sizes for `n` items by largest-remainder rounding. Ties in the
/// fractional part go to the earlier split.
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        // remainders within float noise count as tied
        if (fa - fb).abs() < 1e-9 {
            a.cmp(&b)
        } else {
            fb.total_cmp(&fa)
        }
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Sort ids, shuffle with `seed`, then allocate contiguous blocks to train,
/// validation and test.
pub fn split_conversations(
    ids: &[String],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    let r = ratios.as_array();
    if r.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidRatios(r));
    }
    if ids.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(DatasetError::DuplicateId(id.clone()));
        }
    }
    let mut order: Vec<&String> = ids.iter().collect();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let sizes = largest_remainder(ids.len(), &r);
    let mut assignments = BTreeMap::new();
    let mut cursor = order.into_iter();
    for (split, size) in Split::ALL.into_iter().zip(sizes) {
        for id in cursor.by_ref().take(size) {
            assignments.insert(id.clone(), split);
        }
    }
    Ok(SplitAssignment {
        ratios,
        seed,
        assignments,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextMessage {
    pub speaker: Speaker,
    pub text: String,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub conversation_id: String,
    pub decision_index: usize,
    pub context: Vec<ContextMessage>,
    pub target_text: String,
    pub label: DecisionLabel,
    pub variant: Variant,
    pub directly_addressed: bool,
    pub intervention_type: Option<InterventionType>,
}

impl DatasetRecord {
    pub fn from_example(e: &WindowExample, variant: Variant) -> Self {
        Self {
            conversation_id: e.conversation_id.clone(),
            decision_index: e.decision_index,
            context: e
                .context
                .iter()
                .map(|t| ContextMessage {
                    speaker: t.speaker,
                    text: t.text.clone(),
                })
                .collect(),
            target_text: render_target(e, variant).target_text,
            label: e.label,
            variant,
            directly_addressed: e.directly_addressed,
            intervention_type: e.intervention_type,
        }
    }

    /// Context as turns numbered from zero.
    pub fn context_turns(&self) -> Vec<Turn> {
        self.context
            .iter()
            .enumerate()
            .map(|(index, m)| Turn {
                speaker: m.speaker,
                text: m.text.clone(),
                index,
            })
            .collect()
    }
}

pub fn dataset_file_name(variant: Variant, split: Split) -> String {
    format!("{}_{}.jsonl", variant.name(), split.name())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub variant: Variant,
    pub split: Split,
    pub path: PathBuf,
    pub count: usize,
}

/// Write `{variant}_{split}.jsonl` for every split, in example order. Every
/// split file is created even when empty.
pub fn serialize_examples(
    examples: &[WindowExample],
    variant: Variant,
    assignment: &SplitAssignment,
    out_dir: &Path,
) -> Result<Vec<SplitFile>, DatasetError> {
    let mut buckets: BTreeMap<Split, Vec<DatasetRecord>> =
        Split::ALL.iter().map(|s| (*s, Vec::new())).collect();
    for e in examples {
        let split = assignment
            .split_of(&e.conversation_id)
            .ok_or_else(|| DatasetError::Unassigned(e.conversation_id.clone()))?;
        buckets
            .get_mut(&split)
            .expect("all splits present")
            .push(DatasetRecord::from_example(e, variant));
    }
    let mut files = Vec::new();
    for (split, records) in buckets {
        let path = out_dir.join(dataset_file_name(variant, split));
        let count = jsonl::write_jsonl(&path, &records)?;
        files.push(SplitFile {
            variant,
            split,
            path,
            count,
        });
    }
    Ok(files)
}

pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    Ok(jsonl::read_jsonl(path)?)
}
