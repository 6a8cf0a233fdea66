//! Rollout rewards for speak/silent policies and the bookkeeping around them.
//!
//! The total reward is
//!
//! ```text
//! total = accuracy + soft_timing + type_bonus - necessity
//! ```
//!
//! where each component can be switched off and `necessity` is the applied
//! penalty `lambda * 1[false positive]`:
//!
//! | component   | value                                        | applies to      |
//! |-------------|----------------------------------------------|-----------------|
//! | accuracy    | +1 correct, -1 wrong                         | every decision  |
//! | soft_timing | +0.1 (<= 2 early), 0.0 (<= 4), -0.1 (> 4)    | SPEAK decisions |
//! | type_bonus  | +0.3 when the judged type matches gold       | true positives  |
//! | necessity   | lambda                                       | false positives |

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{BackendError, ChatBackend, ChatRequest};
use crate::dataset::DecisionLabel;
use crate::metrics::{render_context, MetricsReport};
use crate::scenario::{strip_code_fence, InterventionType, UnknownInterventionType};
use crate::transcript::Turn;

pub const ACCURACY_REWARD: f64 = 1.0;
pub const SOFT_TIMING_NEAR: f64 = 0.1;
pub const SOFT_TIMING_FAR: f64 = -0.1;
pub const TYPE_BONUS: f64 = 0.3;
pub const DEFAULT_GROUP_SIZE: usize = 8;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub lambda: f64,
    pub enable_accuracy: bool,
    pub enable_soft_timing: bool,
    pub enable_type_bonus: bool,
    pub enable_necessity: bool,
    /// Skip the necessity penalty for false positives that land within two
    /// decisions before a gold SPEAK. Off by default.
    #[serde(default)]
    pub waive_necessity_near_miss: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("invalid rollout outcome: {0}")]
    InvalidOutcome(&'static str),
    #[error("invalid reward configuration: {0}")]
    InvalidConfig(String),
    #[error("advantage groups need at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("batch size must be a positive even number, got {0}")]
    OddBatchSize(usize),
    #[error("no {0} examples to sample from")]
    MissingClass(DecisionLabel),
    #[error("no scored examples")]
    EmptyScores,
    #[error("FIR target must lie in [0, 1], got {0}")]
    InvalidTarget(f64),
    #[error("speak score must be finite, got {0}")]
    NonFiniteScore(f64),
    #[error(transparent)]
    UnknownInterventionType(#[from] UnknownInterventionType),
    #[error("judge backend: {0}")]
    Backend(#[from] BackendError),
}

impl RewardConfig {
    /// All four components.
    pub fn full(lambda: f64) -> Self {
        Self {
            lambda,
            enable_accuracy: true,
            enable_soft_timing: true,
            enable_type_bonus: true,
            enable_necessity: true,
            waive_necessity_near_miss: false,
        }
    }

    /// Cumulative presets: `acc`, `acc+soft`, `acc+soft+type`, `all`.
    pub fn preset(name: &str, lambda: f64) -> Result<Self, RewardError> {
        let flags = match name {
            "acc" => [true, false, false, false],
            "acc+soft" => [true, true, false, false],
            "acc+soft+type" => [true, true, true, false],
            "all" => [true, true, true, true],
            other => return Err(RewardError::InvalidConfig(format!("unknown component preset `{other}`"))),
        };
        let cfg = Self {
            lambda,
            enable_accuracy: flags[0],
            enable_soft_timing: flags[1],
            enable_type_bonus: flags[2],
            enable_necessity: flags[3],
            waive_necessity_near_miss: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(RewardError::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.enable_accuracy || self.enable_soft_timing || self.enable_type_bonus || self.enable_necessity) {
            return Err(RewardError::InvalidConfig("at least one component must be enabled".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutOutcome {
    pub predicted: DecisionLabel,
    pub gold: DecisionLabel,
    /// Decision steps from a predicted SPEAK to the nearest gold SPEAK at or after it.
    #[serde(default)]
    pub turns_early: Option<u32>,
    #[serde(default)]
    pub judged_type: Option<InterventionType>,
    #[serde(default)]
    pub gold_type: Option<InterventionType>,
}

impl RolloutOutcome {
    pub fn is_true_positive(&self) -> bool {
        self.predicted.is_speak() && self.gold.is_speak()
    }

    pub fn is_false_positive(&self) -> bool {
        self.predicted.is_speak() && !self.gold.is_speak()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub accuracy: f64,
    pub soft_timing: f64,
    pub type_bonus: f64,
    /// Penalty actually applied (non-negative); subtracted from the total.
    pub necessity: f64,
    pub total: f64,
}

/// Distance from decision `index` to the nearest gold SPEAK at or after it.
pub fn turns_early(index: usize, gold: &[DecisionLabel]) -> Option<u32> {
    gold.get(index..)?
        .iter()
        .position(|l| l.is_speak())
        .map(|d| d as u32)
}

fn soft_timing_value(turns_early: Option<u32>) -> f64 {
    match turns_early {
        Some(d) if d <= 2 => SOFT_TIMING_NEAR,
        Some(d) if d <= 4 => 0.0,
        _ => SOFT_TIMING_FAR,
    }
}

pub fn score(outcome: &RolloutOutcome, cfg: &RewardConfig) -> Result<RewardBreakdown, RewardError> {
    if outcome.judged_type.is_some() && !outcome.is_true_positive() {
        return Err(RewardError::InvalidOutcome("judged_type is only defined on true positives"));
    }
    if outcome.turns_early.is_some() && !outcome.predicted.is_speak() {
        return Err(RewardError::InvalidOutcome("turns_early is only defined on SPEAK predictions"));
    }

    let accuracy = match (cfg.enable_accuracy, outcome.predicted == outcome.gold) {
        (false, _) => 0.0,
        (true, true) => ACCURACY_REWARD,
        (true, false) => -ACCURACY_REWARD,
    };
    let soft_timing = if cfg.enable_soft_timing && outcome.predicted.is_speak() {
        soft_timing_value(outcome.turns_early)
    } else {
        0.0
    };
    let type_bonus = match (outcome.judged_type, outcome.gold_type) {
        (Some(judged), Some(gold)) if cfg.enable_type_bonus && outcome.is_true_positive() && judged == gold => TYPE_BONUS,
        _ => 0.0,
    };
    let waived = cfg.waive_necessity_near_miss && outcome.turns_early.is_some_and(|d| d <= 2);
    let necessity = if cfg.enable_necessity && outcome.is_false_positive() && !waived {
        cfg.lambda
    } else {
        0.0
    };
    Ok(RewardBreakdown {
        accuracy,
        soft_timing,
        type_bonus,
        necessity,
        total: accuracy + soft_timing + type_bonus - necessity,
    })
}

/// Group-normalized advantages `(r - mean) / max(std, eps)` with the
/// population standard deviation. Constant groups map to all zeros.
pub fn group_advantages(rewards: &[f64], eps: f64) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let denom = std.max(eps);
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoGroup {
    pub group_size: usize,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GrpoGroup {
    pub fn from_rewards(rewards: Vec<f64>, eps: f64) -> Result<Self, RewardError> {
        let advantages = group_advantages(&rewards, eps)?;
        Ok(Self {
            group_size: rewards.len(),
            rewards,
            advantages,
        })
    }
}

/// Endless generator of class-balanced batches of indices into the example
/// list: each batch holds `batch_size / 2` SPEAK and `batch_size / 2` SILENT
/// indices in shuffled order. Each class pool is drawn without replacement
/// and reshuffled when exhausted, so small pools repeat.
#[derive(Debug, Clone)]
pub struct BalancedBatches {
    half: usize,
    rng: ChaCha8Rng,
    speak: PoolCursor,
    silent: PoolCursor,
}

#[derive(Debug, Clone)]
struct PoolCursor {
    items: Vec<usize>,
    pos: usize,
}

impl PoolCursor {
    fn new(items: Vec<usize>, rng: &mut ChaCha8Rng) -> Self {
        let mut cursor = Self { items, pos: 0 };
        cursor.items.shuffle(rng);
        cursor
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.items.len() {
            self.items.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.items[self.pos - 1]
    }
}

impl BalancedBatches {
    pub fn new(labels: &[DecisionLabel], batch_size: usize, seed: u64) -> Result<Self, RewardError> {
        if batch_size == 0 || batch_size % 2 != 0 {
            return Err(RewardError::OddBatchSize(batch_size));
        }
        let (speak, silent): (Vec<usize>, Vec<usize>) =
            (0..labels.len()).partition(|&i| labels[i].is_speak());
        if speak.is_empty() {
            return Err(RewardError::MissingClass(DecisionLabel::Speak));
        }
        if silent.is_empty() {
            return Err(RewardError::MissingClass(DecisionLabel::Silent));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let speak = PoolCursor::new(speak, &mut rng);
        let silent = PoolCursor::new(silent, &mut rng);
        Ok(Self {
            half: batch_size / 2,
            rng,
            speak,
            silent,
        })
    }
}

impl Iterator for BalancedBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let mut batch = Vec::with_capacity(self.half * 2);
        for _ in 0..self.half {
            batch.push(self.speak.next(&mut self.rng));
        }
        for _ in 0..self.half {
            batch.push(self.silent.next(&mut self.rng));
        }
        batch.shuffle(&mut self.rng);
        Some(batch)
    }
}

pub fn balanced_batches(labels: &[DecisionLabel], batch_size: usize, seed: u64) -> Result<BalancedBatches, RewardError> {
    BalancedBatches::new(labels, batch_size, seed)
}

/// Fingerprint line of the intervention-type judge prompt.
pub const JUDGE_ROLE: &str = "You are an annotator classifying why an AI assistant intervened in a group conversation.";

pub const JUDGE_INSTRUCTIONS: &str = "Classify the assistant's intervention into exactly one of these intervention types:
- Factual Correction: corrects an erroneous claim made by a participant.
- Concept Definition: clarifies or defines a misunderstood or undefined concept.
- Data Provision: contributes relevant facts, figures or data.
- Source Identification: points participants to an authoritative source.
- Synthesis & Reframing: integrates several viewpoints into a coherent perspective.

Answer with the intervention type name only.";

pub fn build_judge_prompt(context: &[Turn], utterance: &str) -> (String, String) {
    let system = format!("{JUDGE_ROLE}\n\n{JUDGE_INSTRUCTIONS}");
    let user = format!(
        "Conversation so far:\n{}\n\nAssistant intervention:\n[AGENT]: {}",
        render_context(context),
        utterance.trim()
    );
    (system, user)
}

pub fn parse_judge_response(raw: &str) -> Result<InterventionType, RewardError> {
    let body = strip_code_fence(raw);
    let line = body.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let line = line.trim().trim_start_matches(|c: char| c == '-' || c == '*').trim();
    let label = line
        .strip_prefix("Intervention type:")
        .or_else(|| line.strip_prefix("intervention type:"))
        .unwrap_or(line);
    Ok(label.parse::<InterventionType>()?)
}

/// Ask the judge backend which intervention type a true-positive utterance is.
pub async fn judge_type<B: ChatBackend + ?Sized>(
    backend: &B,
    backend_id: &str,
    model_id: &str,
    context: &[Turn],
    utterance: &str,
) -> Result<InterventionType, RewardError> {
    let (system, user) = build_judge_prompt(context, utterance);
    let req = ChatRequest::new(backend_id, model_id, system, user).with_max_output(16);
    let resp = backend.complete(&req).await?;
    parse_judge_response(&resp.text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredDecision {
    pub speak_score: f64,
    pub gold: DecisionLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Predict SPEAK iff `speak_score >= threshold`. May be infinite.
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub fir: f64,
    pub recall: f64,
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

/// Candidate thresholds: `-inf`, midpoints between consecutive distinct
/// scores, `+inf`.
pub fn candidate_thresholds(scored: &[ScoredDecision]) -> Vec<f64> {
    let mut scores: Vec<f64> = scored.iter().map(|s| s.speak_score).collect();
    scores.sort_by(|a, b| a.total_cmp(b));
    scores.dedup();
    let mut out = Vec::with_capacity(scores.len() + 1);
    out.push(f64::NEG_INFINITY);
    out.extend(scores.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(f64::INFINITY);
    out
}

fn rate(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Pick the threshold with the highest SPEAK recall subject to FIR <= target.
/// Ties go to lower FIR, then to the lower threshold. The `+inf` candidate
/// (never speak) has FIR 0, so some threshold is always feasible.
pub fn calibrate_threshold(scored: &[ScoredDecision], fir_target: f64) -> Result<Calibration, RewardError> {
    if scored.is_empty() {
        return Err(RewardError::EmptyScores);
    }
    if !(0.0..=1.0).contains(&fir_target) {
        return Err(RewardError::InvalidTarget(fir_target));
    }
    if let Some(bad) = scored.iter().find(|s| !s.speak_score.is_finite()) {
        return Err(RewardError::NonFiniteScore(bad.speak_score));
    }

    let positives = scored.iter().filter(|s| s.gold.is_speak()).count() as u64;
    let negatives = scored.len() as u64 - positives;

    // Descending by score; lowering the threshold past a block of equal
    // scores turns the whole block into SPEAK predictions.
    let mut sorted: Vec<&ScoredDecision> = scored.iter().collect();
    sorted.sort_by(|a, b| b.speak_score.total_cmp(&a.speak_score));

    let mut best = Calibration {
        threshold: f64::INFINITY,
        fir: 0.0,
        recall: 0.0,
    };
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].speak_score;
        while i < sorted.len() && sorted[i].speak_score == score {
            if sorted[i].gold.is_speak() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let threshold = match sorted.get(i) {
            Some(next) => next.speak_score + (score - next.speak_score) / 2.0,
            None => f64::NEG_INFINITY,
        };
        let fir = rate(fp, negatives);
        let recall = rate(tp, positives);
        if fir > fir_target {
            continue;
        }
        let better = recall > best.recall
            || (recall == best.recall && fir < best.fir)
            || (recall == best.recall && fir == best.fir && threshold < best.threshold);
        if better {
            best = Calibration { threshold, fir, recall };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n < 2 || xs.iter().all(|x| *x == xs[0]) {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

/// One evaluated training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub lambda: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub lambda: f64,
    pub runs: usize,
    pub macro_f1: MeanStd,
    pub speak_recall: MeanStd,
    pub fir: MeanStd,
    pub mir: MeanStd,
    /// Mean MIR minus the baseline's MIR.
    pub delta_mir: Option<f64>,
}

/// Mean and sample std of the headline metrics for each lambda, ascending.
pub fn aggregate_ablation(runs: &[AblationRun], baseline: Option<&MetricsReport>) -> Vec<AblationRow> {
    let mut groups: BTreeMap<u64, (f64, Vec<&MetricsReport>)> = BTreeMap::new();
    for run in runs {
        // total order on non-negative finite lambdas
        groups
            .entry(run.lambda.to_bits())
            .or_insert_with(|| (run.lambda, Vec::new()))
            .1
            .push(&run.report);
    }
    let mut rows: Vec<AblationRow> = groups
        .into_values()
        .map(|(lambda, reports)| {
            let col = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
            let mir = col(|r| r.mir);
            AblationRow {
                lambda,
                runs: reports.len(),
                macro_f1: col(|r| r.macro_f1),
                speak_recall: col(|r| r.speak_recall),
                fir: col(|r| r.fir),
                delta_mir: baseline.map(|b| mir.mean - b.mir),
                mir,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    rows
}
