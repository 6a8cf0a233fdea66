//! Scenario augmentation: a one-sentence social context plus the intervention
//! type the agent is expected to make, inferred per source record.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::chat::{BackendError, ChatBackend, ChatRequest};
use crate::corpus::SourceRecord;
use crate::template;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InterventionType {
    FactualCorrection,
    ConceptDefinition,
    DataProvision,
    SourceIdentification,
    SynthesisReframing,
}

impl InterventionType {
    pub const ALL: [InterventionType; 5] = [
        InterventionType::FactualCorrection,
        InterventionType::ConceptDefinition,
        InterventionType::DataProvision,
        InterventionType::SourceIdentification,
        InterventionType::SynthesisReframing,
    ];

    pub fn label(self) -> &'static str {
        match self {
            InterventionType::FactualCorrection => "Factual Correction",
            InterventionType::ConceptDefinition => "Concept Definition",
            InterventionType::DataProvision => "Data Provision",
            InterventionType::SourceIdentification => "Source Identification",
            InterventionType::SynthesisReframing => "Synthesis & Reframing",
        }
    }

    /// Parse a label leniently: case-insensitive, whitespace-collapsed, and
    /// with `&` and `and` interchangeable.
    pub fn from_label(raw: &str) -> Option<Self> {
        let wanted = normalize_label(raw);
        Self::ALL
            .into_iter()
            .find(|t| normalize_label(t.label()) == wanted)
    }
}

fn normalize_label(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '.')
        .to_lowercase()
        .replace('&', " and ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl fmt::Display for InterventionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown intervention type `{0}`")]
pub struct UnknownInterventionType(pub String);

impl FromStr for InterventionType {
    type Err = UnknownInterventionType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_label(s).ok_or_else(|| UnknownInterventionType(s.to_string()))
    }
}

impl Serialize for InterventionType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for InterventionType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub record_id: u64,
    pub social_context: String,
    pub intervention_type: InterventionType,
}

/// Role line of the scenario prompt; also the fingerprint backends use to
/// recognize scenario requests.
pub const SCENARIO_ROLE: &str = "You are a creative scenario writer. Your task is to generate a single, detailed scenario JSON object based on a user's question and its detailed background.";

pub const SCENARIO_TEMPLATE: &str = r#"Input Information:
1. Question Title: {question_title}
2. Question Content: {question_content}
3. Best Answer: {best_answer}

Task: Based on the provided information, create a complete scenario by performing these steps:
1. Invent a Social Context: Create a one-sentence context describing who would be discussing this topic.
2. Select an Intervention Type: Choose the most logical ai_intervention_type from: [Factual Correction, Concept Definition, Data Provision, Source Identification, Synthesis & Reframing].

Output Format: You must output ONLY the raw JSON object with the following structure:
{ "social_context": "your one-sentence context here", "intervention_type": "selected intervention type here" }"#;

/// A prompt split into the system role and the user body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    /// Full prompt text as a single message.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

pub fn build_scenario_prompt(record: &SourceRecord) -> Prompt {
    Prompt {
        system: SCENARIO_ROLE.to_string(),
        user: template::render(
            SCENARIO_TEMPLATE,
            &[
                ("question_title", &record.question_title),
                ("question_content", &record.question_content),
                ("best_answer", &record.best_answer),
            ],
        ),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("malformed scenario response: {0}")]
    MalformedResponse(String),
    #[error(transparent)]
    UnknownInterventionType(#[from] UnknownInterventionType),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("record {record_id}: no usable scenario after {attempts} attempts")]
    Exhausted { record_id: u64, attempts: u32 },
}

/// Strip surrounding whitespace and a Markdown code fence (with optional
/// language tag) if present.
pub fn strip_code_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(body) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let body = match body.find('\n') {
        Some(nl) if body[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => &body[nl + 1..],
        _ => body,
    };
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

#[derive(Deserialize)]
struct RawScenario {
    social_context: Option<String>,
    intervention_type: Option<String>,
}

/// Extract `(social_context, intervention_type)` from a model response.
pub fn parse_scenario_response(raw: &str) -> Result<(String, InterventionType), ScenarioError> {
    let body = strip_code_fence(raw);
    let parsed: RawScenario = serde_json::from_str(body)
        .map_err(|e| ScenarioError::MalformedResponse(e.to_string()))?;
    let context = parsed
        .social_context
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ScenarioError::MalformedResponse("missing social_context".into()))?;
    let kind = parsed
        .intervention_type
        .ok_or_else(|| ScenarioError::MalformedResponse("missing intervention_type".into()))?;
    Ok((context, kind.parse()?))
}

/// Render a scenario the way a well-behaved model would answer.
pub fn render_scenario_response(social_context: &str, kind: InterventionType) -> String {
    serde_json::json!({
        "social_context": social_context,
        "intervention_type": kind.label(),
    })
    .to_string()
}

/// Settings for scenario requests.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSettings {
    pub backend_id: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output: u32,
    /// Re-requests after an unusable response.
    pub max_retries: u32,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self {
            backend_id: "mock".into(),
            model_id: "gpt-4o-mini".into(),
            temperature: 0.7,
            max_output: 256,
            max_retries: 3,
        }
    }
}

pub fn scenario_request(record: &SourceRecord, settings: &AugmentSettings) -> ChatRequest {
    let prompt = build_scenario_prompt(record);
    ChatRequest::new(&settings.backend_id, &settings.model_id, prompt.system, prompt.user)
        .with_temperature(settings.temperature)
        .with_max_output(settings.max_output)
}

/// Ask the backend for a scenario, re-requesting (bypassing any cache) on
/// malformed or unknown-type responses. Backend errors are not retried here;
/// the backend applies its own transport retry policy.
pub async fn augment_record<B: ChatBackend + ?Sized>(
    backend: &B,
    record: &SourceRecord,
    settings: &AugmentSettings,
) -> Result<Scenario, ScenarioError> {
    let req = scenario_request(record, settings);
    let attempts = settings.max_retries + 1;
    for attempt in 0..attempts {
        let resp = if attempt == 0 {
            backend.complete(&req).await?
        } else {
            backend.complete_fresh(&req).await?
        };
        match parse_scenario_response(&resp.text) {
            Ok((social_context, intervention_type)) => {
                return Ok(Scenario {
                    record_id: record.id,
                    social_context,
                    intervention_type,
                })
            }
            Err(ScenarioError::MalformedResponse(_) | ScenarioError::UnknownInterventionType(_)) => {
                continue
            }
            Err(other) => return Err(other),
        }
    }
    Err(ScenarioError::Exhausted {
        record_id: record.id,
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(title: &str, content: &str, answer: &str) -> SourceRecord {
        SourceRecord::new(1, title, content, answer)
    }

    #[test]
    fn labels_round_trip() {
        for t in InterventionType::ALL {
            assert_eq!(t.label().parse::<InterventionType>().unwrap(), t);
        }
    }

    #[test]
    fn label_matching_is_lenient() {
        assert_eq!(
            InterventionType::from_label("synthesis & reframing"),
            Some(InterventionType::SynthesisReframing)
        );
        assert_eq!(
            InterventionType::from_label("Synthesis and Reframing"),
            Some(InterventionType::SynthesisReframing)
        );
        assert_eq!(
            InterventionType::from_label("  DATA   provision "),
            Some(InterventionType::DataProvision)
        );
        assert_eq!(InterventionType::from_label("Moderation"), None);
        assert_eq!(InterventionType::from_label("none"), None);
    }

    #[test]
    fn prompt_substitutes_fields() {
        let p = build_scenario_prompt(&record("T", "C", "A")).text();
        assert!(p.contains("Question Title: T"));
        assert!(p.contains("Question Content: C"));
        assert!(p.contains("Best Answer: A"));
        assert!(template::placeholders(&p).is_empty());
        assert!(p.starts_with("You are a creative scenario writer"));
    }

    #[test]
    fn prompt_does_not_resubstitute() {
        let p = build_scenario_prompt(&record("{best_answer}", "C", "A")).text();
        assert!(p.contains("Question Title: {best_answer}"));
        assert!(p.contains("Best Answer: A"));
        assert_eq!(p.matches("{best_answer}").count(), 1);
    }

    #[test]
    fn prompt_lists_all_types() {
        let p = build_scenario_prompt(&record("T", "C", "A")).text();
        for t in InterventionType::ALL {
            assert!(p.contains(t.label()), "{t}");
        }
    }

    #[test]
    fn prompt_is_deterministic() {
        let r = record("a b c d e", "f g h i j", "k l m n o");
        assert_eq!(build_scenario_prompt(&r), build_scenario_prompt(&r));
    }

    #[test]
    fn parses_plain_object() {
        let (ctx, t) =
            parse_scenario_response(r#"{"social_context":"s","intervention_type":"Data Provision"}"#)
                .unwrap();
        assert_eq!(ctx, "s");
        assert_eq!(t, InterventionType::DataProvision);
    }

    #[test]
    fn fenced_variants_match_unwrapped() {
        let object = r#"{"social_context":"a group of hikers","intervention_type":"Source Identification"}"#;
        let expected = parse_scenario_response(object).unwrap();
        let wrappers = [
            ("```\n", "\n```"),
            ("```json\n", "\n```"),
            ("  \n```JSON\n", "\n```  \n"),
            ("\n\n", "\n"),
            ("```", "```"),
        ];
        for (pre, post) in wrappers {
            let wrapped = format!("{pre}{object}{post}");
            assert_eq!(parse_scenario_response(&wrapped).unwrap(), expected, "{wrapped:?}");
        }
    }

    #[test]
    fn unknown_type_is_reported() {
        let err = parse_scenario_response(r#"{"social_context":"s","intervention_type":"Moderation"}"#)
            .unwrap_err();
        assert!(matches!(err, ScenarioError::UnknownInterventionType(_)));
    }

    #[test]
    fn malformed_responses() {
        for raw in ["", "not json", r#"{"social_context":"s"}"#, r#"{"intervention_type":"Data Provision"}"#, r#"{"social_context":"","intervention_type":"Data Provision"}"#] {
            assert!(
                matches!(parse_scenario_response(raw), Err(ScenarioError::MalformedResponse(_))),
                "{raw:?}"
            );
        }
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(ctx in "[A-Za-z0-9 ,.'\"-]{1,80}", idx in 0usize..5) {
            prop_assume!(!ctx.trim().is_empty());
            let kind = InterventionType::ALL[idx];
            let raw = render_scenario_response(ctx.trim(), kind);
            let (parsed_ctx, parsed_kind) = parse_scenario_response(&raw).unwrap();
            prop_assert_eq!(parsed_ctx, ctx.trim());
            prop_assert_eq!(parsed_kind, kind);
        }
    }
}
