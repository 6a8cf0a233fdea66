//! Corpus statistics over generated transcripts.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{build_windows, DEFAULT_WINDOW};
use crate::scenario::InterventionType;
use crate::transcript::{Transcript, Turn};
use crate::AGENT_TAG;

pub const DEFAULT_DISAGREEMENT_MARKERS: [&str; 5] =
    ["disagree", "wrong", "no that's not", "i don't think", "actually"];

/// True iff the most recent human turn in `context` mentions the agent tag
/// (case-insensitive).
pub fn detect_direct_address(context: &[Turn]) -> bool {
    let tag = AGENT_TAG.to_lowercase();
    context
        .iter()
        .rev()
        .find(|t| !t.speaker.is_agent())
        .is_some_and(|t| t.text.to_lowercase().contains(&tag))
}

/// Case-insensitive whole-word matcher over a marker list.
#[derive(Debug, Clone)]
pub struct DisagreementMatcher {
    regex: Option<Regex>,
}

impl DisagreementMatcher {
    pub fn new<S: AsRef<str>>(markers: &[S]) -> Self {
        let alternatives: Vec<String> = markers
            .iter()
            .map(|m| m.as_ref().trim())
            .filter(|m| !m.is_empty())
            .map(regex::escape)
            .collect();
        let regex = (!alternatives.is_empty()).then(|| {
            Regex::new(&format!(r"(?i)\b(?:{})\b", alternatives.join("|")))
                .expect("escaped markers form a valid pattern")
        });
        Self { regex }
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.regex.as_ref().is_some_and(|r| r.is_match(text))
    }
}

impl Default for DisagreementMatcher {
    fn default() -> Self {
        Self::new(&DEFAULT_DISAGREEMENT_MARKERS)
    }
}

/// True iff any human turn contains any marker at word boundaries.
pub fn detect_disagreement<S: AsRef<str>>(t: &Transcript, markers: &[S]) -> bool {
    transcript_disagrees(t, &DisagreementMatcher::new(markers))
}

fn transcript_disagrees(t: &Transcript, matcher: &DisagreementMatcher) -> bool {
    t.turns
        .iter()
        .filter(|turn| !turn.speaker.is_agent())
        .any(|turn| matcher.is_match(&turn.text))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeShare {
    pub count: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub conv_count: u64,
    pub speak_turns: u64,
    pub interventions_mean: f64,
    pub interventions_median: f64,
    /// Population standard deviation.
    pub interventions_std: f64,
    pub direct_address_count: u64,
    pub direct_address_fraction: f64,
    pub no_invitation_fraction: f64,
    pub zero_intervention_count: u64,
    pub zero_intervention_fraction: f64,
    pub disagreement_count: u64,
    pub disagreement_fraction: f64,
    /// Scenario type counted once per SPEAK turn.
    pub type_histogram: BTreeMap<InterventionType, TypeShare>,
    /// Scenario type counted once per conversation.
    pub type_histogram_by_conversation: BTreeMap<InterventionType, TypeShare>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("no transcripts to analyze")]
    EmptyCorpus,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    }
}

pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn histogram(counts: BTreeMap<InterventionType, u64>) -> BTreeMap<InterventionType, TypeShare> {
    let total: u64 = counts.values().sum();
    counts
        .into_iter()
        .map(|(k, count)| {
            (
                k,
                TypeShare {
                    count,
                    fraction: ratio(count, total),
                },
            )
        })
        .collect()
}

pub fn analyze(transcripts: &[Transcript], matcher: &DisagreementMatcher) -> Result<CorpusStats, StatsError> {
    if transcripts.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    let mut per_conv = Vec::with_capacity(transcripts.len());
    let mut speak_turns = 0u64;
    let mut direct = 0u64;
    let mut zero = 0u64;
    let mut disagreements = 0u64;
    let mut by_turn: BTreeMap<InterventionType, u64> = BTreeMap::new();
    let mut by_conv: BTreeMap<InterventionType, u64> = BTreeMap::new();

    for t in transcripts {
        let kind = t.scenario.intervention_type;
        *by_conv.entry(kind).or_default() += 1;
        let mut speaks = 0u64;
        for e in build_windows(t, DEFAULT_WINDOW) {
            if e.label.is_speak() {
                speaks += 1;
                if e.directly_addressed {
                    direct += 1;
                }
            }
        }
        // Interventions with no preceding turn produce no window but still count.
        let interventions = t.intervention_count() as u64;
        debug_assert!(speaks <= interventions);
        speak_turns += interventions;
        if interventions > 0 {
            *by_turn.entry(kind).or_default() += interventions;
        } else {
            zero += 1;
        }
        if transcript_disagrees(t, matcher) {
            disagreements += 1;
        }
        per_conv.push(interventions as f64);
    }

    let n = transcripts.len() as u64;
    let direct_address_fraction = ratio(direct, speak_turns);
    Ok(CorpusStats {
        conv_count: n,
        speak_turns,
        interventions_mean: mean(&per_conv),
        interventions_median: median(&per_conv),
        interventions_std: population_std(&per_conv),
        direct_address_count: direct,
        direct_address_fraction,
        no_invitation_fraction: if speak_turns > 0 {
            ratio(speak_turns - direct, speak_turns)
        } else {
            0.0
        },
        zero_intervention_count: zero,
        zero_intervention_fraction: ratio(zero, n),
        disagreement_count: disagreements,
        disagreement_fraction: ratio(disagreements, n),
        type_histogram: histogram(by_turn),
        type_histogram_by_conversation: histogram(by_conv),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;
    use crate::transcript::{parse_transcript, sample_spec, Speaker};

    fn turn(speaker: Speaker, text: &str, index: usize) -> Turn {
        Turn {
            speaker,
            text: text.into(),
            index,
        }
    }

    fn transcript(id: &str, raw: &str, kind: InterventionType) -> Transcript {
        Transcript {
            conversation_id: id.into(),
            turns: parse_transcript(raw).unwrap(),
            spec: sample_spec(0),
            scenario: Scenario {
                record_id: 0,
                social_context: "ctx".into(),
                intervention_type: kind,
            },
        }
    }

    /// `speak` lists rounds where the agent speaks; rounds in `addressed`
    /// have the human line mention the agent.
    fn conv(id: &str, rounds: usize, speak: &[usize], addressed: &[usize], kind: InterventionType) -> Transcript {
        let mut raw = String::new();
        for r in 0..rounds {
            if addressed.contains(&r) {
                raw.push_str(&format!("Speaker_{}: what do you think [AGENT]\n", r % 2));
            } else {
                raw.push_str(&format!("Speaker_{}: some remark {r}\n", r % 2));
            }
            if speak.contains(&r) {
                raw.push_str("[AGENT]: here is the thing\n");
            } else {
                raw.push_str("[AGENT]: >\n");
            }
        }
        transcript(id, &raw, kind)
    }

    #[test]
    fn direct_address_on_last_human_turn() {
        let ctx = vec![
            turn(Speaker::Human(0), "hello all", 0),
            turn(Speaker::Agent, ">", 1),
            turn(Speaker::Human(1), "what do you think [AGENT]", 2),
        ];
        assert!(detect_direct_address(&ctx));
        let lower = vec![turn(Speaker::Human(1), "any ideas [agent]?", 0)];
        assert!(detect_direct_address(&lower));
    }

    #[test]
    fn only_latest_human_turn_counts() {
        let cases: Vec<(Vec<Turn>, bool)> = vec![
            (
                vec![
                    turn(Speaker::Human(0), "[AGENT] can you help", 0),
                    turn(Speaker::Agent, ">", 1),
                    turn(Speaker::Human(1), "never mind", 2),
                ],
                false,
            ),
            (
                vec![
                    turn(Speaker::Human(0), "never mind", 0),
                    turn(Speaker::Agent, "[AGENT] says hi", 1),
                ],
                false,
            ),
            (
                vec![
                    turn(Speaker::Human(0), "hey [AGENT]", 0),
                    turn(Speaker::Agent, ">", 1),
                ],
                true,
            ),
            (vec![turn(Speaker::Human(0), "the agent is here", 0)], false),
        ];
        for (ctx, expected) in cases {
            assert_eq!(detect_direct_address(&ctx), expected, "{ctx:?}");
        }
    }

    #[test]
    fn all_agent_context() {
        let ctx = vec![turn(Speaker::Agent, ">", 0), turn(Speaker::Agent, "[AGENT]", 1)];
        assert!(!detect_direct_address(&ctx));
    }

    #[test]
    fn disagreement_markers() {
        let t = transcript("a", "Speaker_0: i disagree with that\n[AGENT]: >", InterventionType::DataProvision);
        assert!(detect_disagreement(&t, &DEFAULT_DISAGREEMENT_MARKERS));
        let t = transcript("b", "Speaker_0: disagreeable weather\n[AGENT]: >", InterventionType::DataProvision);
        assert!(!detect_disagreement(&t, &DEFAULT_DISAGREEMENT_MARKERS));
        let t = transcript("c", "Speaker_0: No that's not it\n[AGENT]: >", InterventionType::DataProvision);
        assert!(detect_disagreement(&t, &DEFAULT_DISAGREEMENT_MARKERS));
        let t = transcript("d", "Speaker_0: fine\n[AGENT]: you are wrong", InterventionType::DataProvision);
        assert!(!detect_disagreement(&t, &DEFAULT_DISAGREEMENT_MARKERS), "agent turns are ignored");
        let t = transcript("e", "Speaker_0: ACTUALLY yes\n[AGENT]: >", InterventionType::DataProvision);
        assert!(detect_disagreement(&t, &DEFAULT_DISAGREEMENT_MARKERS));
        let empty: [&str; 0] = [];
        assert!(!detect_disagreement(&t, &empty));
    }

    #[test]
    fn empty_body_has_no_disagreement() {
        let t = Transcript {
            turns: Vec::new(),
            ..transcript("x", "Speaker_0: hi", InterventionType::DataProvision)
        };
        assert!(!detect_disagreement(&t, &DEFAULT_DISAGREEMENT_MARKERS));
    }

    #[test]
    fn four_conversation_fixture() {
        use InterventionType::*;
        let ts = vec![
            conv("a", 10, &[2, 6], &[6], SynthesisReframing),
            conv("b", 10, &[1, 8], &[], DataProvision),
            conv("c", 10, &[4], &[], SynthesisReframing),
            conv("d", 10, &[1, 3, 7], &[], FactualCorrection),
        ];
        let s = analyze(&ts, &DisagreementMatcher::default()).unwrap();
        assert_eq!(s.conv_count, 4);
        assert_eq!(s.speak_turns, 8);
        assert_eq!(s.interventions_mean, 2.0);
        assert_eq!(s.interventions_median, 2.0);
        assert!((s.interventions_std - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.direct_address_count, 1);
        assert_eq!(s.direct_address_fraction, 0.125);
        assert_eq!(s.direct_address_fraction + s.no_invitation_fraction, 1.0);
        assert_eq!(s.zero_intervention_fraction, 0.0);
        assert_eq!(s.type_histogram[&SynthesisReframing].count, 3);
        assert_eq!(s.type_histogram[&DataProvision].count, 2);
        assert_eq!(s.type_histogram[&FactualCorrection].count, 3);
        assert_eq!(s.type_histogram_by_conversation[&SynthesisReframing].count, 2);
        let total: f64 = s.type_histogram.values().map(|v| v.fraction).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quarter_directly_addressed() {
        use InterventionType::*;
        let ts = vec![
            conv("a", 10, &[2], &[2], DataProvision),
            conv("b", 10, &[3], &[], DataProvision),
            conv("c", 10, &[5, 7], &[6], DataProvision),
        ];
        let s = analyze(&ts, &DisagreementMatcher::default()).unwrap();
        assert_eq!(s.speak_turns, 4);
        assert_eq!(s.direct_address_fraction, 0.25);
        assert_eq!(s.no_invitation_fraction, 0.75);
    }

    #[test]
    fn silent_only_corpus() {
        let ts = vec![
            conv("a", 10, &[], &[], InterventionType::DataProvision),
            conv("b", 10, &[], &[], InterventionType::ConceptDefinition),
        ];
        let s = analyze(&ts, &DisagreementMatcher::default()).unwrap();
        assert_eq!(s.zero_intervention_fraction, 1.0);
        assert_eq!(s.interventions_mean, 0.0);
        assert!(s.type_histogram.is_empty());
        assert_eq!(s.direct_address_fraction, 0.0);
        assert_eq!(s.no_invitation_fraction, 0.0);
    }

    #[test]
    fn empty_corpus_errors() {
        assert_eq!(analyze(&[], &DisagreementMatcher::default()), Err(StatsError::EmptyCorpus));
    }

    #[test]
    fn permutation_invariant() {
        use InterventionType::*;
        let mut ts = vec![
            conv("a", 10, &[2, 6], &[6], SynthesisReframing),
            conv("b", 11, &[1], &[], DataProvision),
            conv("c", 12, &[], &[], ConceptDefinition),
        ];
        let before = analyze(&ts, &DisagreementMatcher::default()).unwrap();
        ts.reverse();
        assert_eq!(analyze(&ts, &DisagreementMatcher::default()).unwrap(), before);
    }
}
