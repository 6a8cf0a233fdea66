//! Evaluation of SPEAK/SILENT decisions.
//!
//! SPEAK is the positive class: a true positive is a correct SPEAK, a false
//! positive an interruption, a false negative a missed intervention.
//!
//! - FIR (false interruption rate) = FP / (FP + TN)
//! - MIR (missed intervention rate) = FN / (FN + TP)
//! - Macro F1 = mean of the SPEAK and SILENT F1 scores
//!
//! Ratios with a zero denominator are reported as 0 and named in
//! [`MetricsReport::degenerate`].

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{BackendError, ChatBackend, ChatRequest};
use crate::dataset::{DatasetRecord, DecisionLabel};
use crate::transcript::Turn;
use crate::{SILENT_TOKEN, SPEAK_TOKEN};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn record(&mut self, pred: DecisionLabel, gold: DecisionLabel) {
        match (pred, gold) {
            (DecisionLabel::Speak, DecisionLabel::Speak) => self.tp += 1,
            (DecisionLabel::Silent, DecisionLabel::Silent) => self.tn += 1,
            (DecisionLabel::Speak, DecisionLabel::Silent) => self.fp += 1,
            (DecisionLabel::Silent, DecisionLabel::Speak) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Same table with SILENT treated as the positive class.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }
}

/// Evaluation slice: whether the agent was directly addressed at the decision point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SliceKey {
    #[serde(rename = "DA")]
    DirectAddress,
    #[serde(rename = "NI")]
    NoInvitation,
}

impl SliceKey {
    pub fn for_example(directly_addressed: bool) -> Self {
        if directly_addressed {
            SliceKey::DirectAddress
        } else {
            SliceKey::NoInvitation
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub macro_f1: f64,
    pub speak_f1: f64,
    pub silent_f1: f64,
    pub speak_precision: f64,
    pub speak_recall: f64,
    pub silent_precision: f64,
    pub silent_recall: f64,
    pub fir: f64,
    pub mir: f64,
    /// Names of ratios whose denominator was zero (reported as 0).
    #[serde(default)]
    pub degenerate: Vec<String>,
    #[serde(default)]
    pub slices: BTreeMap<SliceKey, MetricsReport>,
    #[serde(default)]
    pub rouge_l_tp: Option<f64>,
    #[serde(default)]
    pub parse_failures: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no decisions to evaluate")]
    EmptyEvaluation,
    #[error("unrecognized decision output `{0}`")]
    ParseFailure(String),
    #[error("empty model output")]
    EmptyOutput,
    #[error("no prediction for {conversation_id}#{decision_index}")]
    MissingPrediction {
        conversation_id: String,
        decision_index: usize,
    },
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
}

fn safe_ratio(num: u64, den: u64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if den == 0 {
        degenerate.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(tp: u64, fp: u64, fn_: u64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    safe_ratio(2 * tp, 2 * tp + fp + fn_, name, degenerate)
}

pub fn compute_metrics(c: &ConfusionCounts) -> Result<MetricsReport, EvalError> {
    if c.total() == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    let mut degenerate = Vec::new();
    let d = &mut degenerate;
    let speak_precision = safe_ratio(c.tp, c.tp + c.fp, "speak_precision", d);
    let speak_recall = safe_ratio(c.tp, c.tp + c.fn_, "speak_recall", d);
    let silent_precision = safe_ratio(c.tn, c.tn + c.fn_, "silent_precision", d);
    let silent_recall = safe_ratio(c.tn, c.tn + c.fp, "silent_recall", d);
    let speak_f1 = f1(c.tp, c.fp, c.fn_, "speak_f1", d);
    let silent_f1 = f1(c.tn, c.fn_, c.fp, "silent_f1", d);
    let fir = safe_ratio(c.fp, c.fp + c.tn, "fir", d);
    let mir = safe_ratio(c.fn_, c.fn_ + c.tp, "mir", d);
    Ok(MetricsReport {
        counts: *c,
        macro_f1: (speak_f1 + silent_f1) / 2.0,
        speak_f1,
        silent_f1,
        speak_precision,
        speak_recall,
        silent_precision,
        silent_recall,
        fir,
        mir,
        degenerate,
        slices: BTreeMap::new(),
        rouge_l_tp: None,
        parse_failures: 0,
    })
}

/// Running counts for one evaluation: global, per slice, parse failures and
/// ROUGE-L over true positives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalAccumulator {
    pub global: ConfusionCounts,
    pub slices: BTreeMap<SliceKey, ConfusionCounts>,
    pub parse_failures: u64,
    rouge_sum: f64,
    rouge_n: u64,
}

impl EvalAccumulator {
    pub fn accumulate(&mut self, pred: DecisionLabel, gold: DecisionLabel, slice_keys: &[SliceKey]) {
        self.global.record(pred, gold);
        for key in slice_keys {
            self.slices.entry(*key).or_default().record(pred, gold);
        }
    }

    pub fn add_rouge(&mut self, f1: f64) {
        self.rouge_sum += f1;
        self.rouge_n += 1;
    }

    pub fn merge(&mut self, other: &EvalAccumulator) {
        self.global.merge(&other.global);
        for (k, v) in &other.slices {
            self.slices.entry(*k).or_default().merge(v);
        }
        self.parse_failures += other.parse_failures;
        self.rouge_sum += other.rouge_sum;
        self.rouge_n += other.rouge_n;
    }

    pub fn report(&self) -> Result<MetricsReport, EvalError> {
        let mut report = compute_metrics(&self.global)?;
        for (key, counts) in &self.slices {
            if counts.total() > 0 {
                report.slices.insert(*key, compute_metrics(counts)?);
            }
        }
        report.parse_failures = self.parse_failures;
        report.rouge_l_tp = (self.rouge_n > 0).then(|| self.rouge_sum / self.rouge_n as f64);
        Ok(report)
    }
}

pub const ZERO_SHOT_SYSTEM_PROMPT: &str = "You are [AGENT], an AI conversational agent participating in a multi-party discussion. Your role is to contribute meaningfully when appropriate, but also to exercise restraint --- remaining silent when others are engaged in dialogue that does not require your input.

At each turn, you will see the recent conversation history. Decide whether to speak or stay silent.

Respond with exactly one character:
< if you should speak at this turn (you have something valuable to add, someone needs help, or there is a natural opening)
> if you should remain silent (the conversation is flowing well without you, or your input is not needed)

Output only < or > --- no explanation, no other text.";

/// `tag: text` lines in order.
pub fn render_context(context: &[Turn]) -> String {
    context
        .iter()
        .map(|t| format!("{}: {}", t.speaker.tag(), t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// `(system, user)` for a zero-shot decision request.
pub fn build_zero_shot_prompt(context: &[Turn]) -> (String, String) {
    (ZERO_SHOT_SYSTEM_PROMPT.to_string(), render_context(context))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionMode {
    Token,
    Dialogue,
}

impl std::str::FromStr for DecisionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "token" => Ok(DecisionMode::Token),
            "dialogue" => Ok(DecisionMode::Dialogue),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub label: DecisionLabel,
    /// Candidate utterance in dialogue mode.
    pub utterance: Option<String>,
}

pub fn parse_decision(model_output: &str, mode: DecisionMode) -> Result<Decision, EvalError> {
    let out = model_output.trim();
    if out.is_empty() {
        return Err(EvalError::EmptyOutput);
    }
    match mode {
        DecisionMode::Token => match out {
            SPEAK_TOKEN => Ok(Decision {
                label: DecisionLabel::Speak,
                utterance: None,
            }),
            SILENT_TOKEN => Ok(Decision {
                label: DecisionLabel::Silent,
                utterance: None,
            }),
            other => Err(EvalError::ParseFailure(other.to_string())),
        },
        DecisionMode::Dialogue if out == SILENT_TOKEN => Ok(Decision {
            label: DecisionLabel::Silent,
            utterance: None,
        }),
        DecisionMode::Dialogue => Ok(Decision {
            label: DecisionLabel::Speak,
            utterance: Some(out.to_string()),
        }),
    }
}

/// What to do with outputs that fail to parse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseFailurePolicy {
    /// Score as SILENT and count the failure.
    #[default]
    CountAsSilent,
    /// Leave the decision out of the confusion counts and count the failure.
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn rouge_tokens(text: &str) -> Vec<String> {
    text.to_lowercase().split_whitespace().map(str::to_string).collect()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L over lowercased whitespace tokens. Empty inputs score 0.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let c = rouge_tokens(candidate);
    let r = rouge_tokens(reference);
    if c.is_empty() || r.is_empty() {
        return RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let l = lcs_len(&c, &r) as f64;
    let precision = l / c.len() as f64;
    let recall = l / r.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScore {
        precision,
        recall,
        f1,
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub conversation_id: String,
    pub decision_index: usize,
    pub output_text: String,
    #[serde(default)]
    pub speak_score: Option<f64>,
}

/// Score predictions against dataset records. Every record needs a prediction.
pub fn evaluate(
    records: &[DatasetRecord],
    predictions: &[Prediction],
    mode: DecisionMode,
    policy: ParseFailurePolicy,
) -> Result<MetricsReport, EvalError> {
    let by_key: HashMap<(&str, usize), &Prediction> = predictions
        .iter()
        .map(|p| ((p.conversation_id.as_str(), p.decision_index), p))
        .collect();
    let mut acc = EvalAccumulator::default();
    for rec in records {
        let pred = by_key
            .get(&(rec.conversation_id.as_str(), rec.decision_index))
            .ok_or_else(|| EvalError::MissingPrediction {
                conversation_id: rec.conversation_id.clone(),
                decision_index: rec.decision_index,
            })?;
        let decision = match parse_decision(&pred.output_text, mode) {
            Ok(d) => d,
            Err(EvalError::ParseFailure(_) | EvalError::EmptyOutput) => {
                acc.parse_failures += 1;
                match policy {
                    ParseFailurePolicy::CountAsSilent => Decision {
                        label: DecisionLabel::Silent,
                        utterance: None,
                    },
                    ParseFailurePolicy::Exclude => continue,
                }
            }
            Err(e) => return Err(e),
        };
        acc.accumulate(
            decision.label,
            rec.label,
            &[SliceKey::for_example(rec.directly_addressed)],
        );
        if mode == DecisionMode::Dialogue && decision.label.is_speak() && rec.label.is_speak() {
            let candidate = decision.utterance.as_deref().unwrap_or_default();
            acc.add_rouge(rouge_l(candidate, &rec.target_text).f1);
        }
    }
    acc.report()
}

/// Ask a backend for a zero-shot decision on each record.
pub async fn predict_zero_shot<B: ChatBackend + ?Sized>(
    backend: &B,
    backend_id: &str,
    model_id: &str,
    records: &[DatasetRecord],
) -> Result<Vec<Prediction>, EvalError> {
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let (system, user) = build_zero_shot_prompt(&rec.context_turns());
        let req = ChatRequest::new(backend_id, model_id, system, user)
            .with_max_output(1)
            .with_scores(true);
        let resp = backend.complete(&req).await?;
        out.push(Prediction {
            conversation_id: rec.conversation_id.clone(),
            decision_index: rec.decision_index,
            output_text: resp.text,
            speak_score: resp.speak_score,
        });
    }
    Ok(out)
}
