//! Transcript synthesis: generation controls, the transcript prompt, parsing
//! raw `tag: text` transcripts and checking them against the generation rules.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::chat::{BackendError, ChatBackend, ChatRequest};
use crate::corpus::SourceRecord;
use crate::scenario::{Prompt, Scenario};
use crate::{template, AGENT_TAG, SILENT_TOKEN};

pub const CONVERSATION_STYLES: [&str; 6] = [
    "with frequent disagreements and debates",
    "with participants building on each other's ideas collaboratively",
    "with a mix of experts and novices asking clarifying questions",
    "with storytelling and personal anecdotes",
    "with structured turn-taking and formal language",
    "with casual, overlapping dialogue and interruptions",
];

pub const TONE_VARIATIONS: [&str; 5] = [
    "enthusiastic and energetic",
    "thoughtful and contemplative",
    "professional and business-like",
    "casual and friendly",
    "curious and inquisitive",
];

pub const FOLLOW_UPS: [&str; 4] = [
    "ask a follow up question, to which [AGENT] should respond appropriately.",
    "refute what [AGENT] is saying, to which [AGENT] should give a deeper explanation.",
    "agree to what [AGENT] is saying, acknowledge it, and move on with the conversation.",
    "completely disregard what [AGENT] says and move on with the conversation.",
];

pub const MIN_HUMANS: u8 = 2;
pub const MAX_HUMANS: u8 = 6;
pub const MIN_EXCHANGES: usize = 20;
pub const MAX_INTERVENTIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub style: String,
    pub tone: String,
    pub follow_up: String,
    pub human_count: u8,
    pub seed: u64,
}

/// Draw style, tone, follow-up and human count uniformly; deterministic in `seed`.
pub fn sample_spec(seed: u64) -> GenerationSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let style = CONVERSATION_STYLES[rng.gen_range(0..CONVERSATION_STYLES.len())];
    let tone = TONE_VARIATIONS[rng.gen_range(0..TONE_VARIATIONS.len())];
    let follow_up = FOLLOW_UPS[rng.gen_range(0..FOLLOW_UPS.len())];
    let human_count = rng.gen_range(MIN_HUMANS..=MAX_HUMANS);
    GenerationSpec {
        style: style.to_string(),
        tone: tone.to_string(),
        follow_up: follow_up.to_string(),
        human_count,
        seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Speaker {
    Human(u32),
    Agent,
}

impl Speaker {
    pub fn tag(self) -> String {
        match self {
            Speaker::Human(k) => format!("Speaker_{k}"),
            Speaker::Agent => AGENT_TAG.to_string(),
        }
    }

    pub fn is_agent(self) -> bool {
        self == Speaker::Agent
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for Speaker {
    type Err = TranscriptError;

    fn from_str(tag: &str) -> Result<Self, Self::Err> {
        if tag == AGENT_TAG {
            return Ok(Speaker::Agent);
        }
        tag.strip_prefix("Speaker_")
            .filter(|k| !k.is_empty() && k.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|k| k.parse().ok())
            .map(Speaker::Human)
            .ok_or_else(|| TranscriptError::UnknownSpeakerTag(tag.to_string()))
    }
}

impl Serialize for Speaker {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.tag())
    }
}

impl<'de> Deserialize<'de> for Speaker {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub index: usize,
}

impl Turn {
    pub fn is_silence(&self) -> bool {
        self.speaker.is_agent() && self.text == SILENT_TOKEN
    }

    /// An agent turn that is not the silent token.
    pub fn is_intervention(&self) -> bool {
        self.speaker.is_agent() && self.text != SILENT_TOKEN
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub conversation_id: String,
    pub turns: Vec<Turn>,
    pub spec: GenerationSpec,
    pub scenario: Scenario,
}

impl Transcript {
    pub fn intervention_count(&self) -> usize {
        self.turns.iter().filter(|t| t.is_intervention()).count()
    }

    pub fn agent_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.speaker.is_agent())
    }
}

pub const TRANSCRIPT_ROLE: &str = "You are a sophisticated data generator. Your task is to generate a realistic group discussion transcript based on the provided scenario.";

/// The fifteen generation rules, in order, with placeholders.
pub const TRANSCRIPT_RULES: [&str; 15] = [
    "1. The discussion must feature {human_count} human participants and one AI assistant named [AGENT].",
    "2. [AGENT] appears only a few times (1--3 times), with a meaningful intervention.",
    "3. The discussion should feel natural, with a clear trigger for [AGENT]'s intervention.",
    "4. After [AGENT] speaks, humans should react naturally and continue the discussion.",
    "5. Generate a relatively decent-sized conversation (at least 20 exchanges total).",
    "6. Make the conversation {selected_style} and maintain a {selected_tone} tone.",
    "7. Each participant should have a distinct personality and speaking style.",
    "8. Output only the conversation, DO NOT OUTPUT ANYTHING BUT THE CONVERSATION.",
    "9. After every human speaking, if the AI is not adding something meaningful to the conversation, add --- [AGENT]: >",
    "10. Make [AGENT]'s intervention natural; do not include numbered lists or bullet points.",
    "11. When the user asks a question to [AGENT] directly, and it responds, the user should {follow_up}",
    "12. The participants should treat [AGENT] like their AI partner in the conversation.",
    "13. There should be no punctuation marks in your output.",
    "14. Do not use names; use Speaker_0, Speaker_1, etc.",
    "15. Do not have the users address [AGENT] explicitly unless needed in the follow-up.",
];

pub const TRANSCRIPT_SCENARIO_BLOCK: &str = "Scenario Details:
- Topic: {question_title}
- Initial Question: {question_content}
- Context: {context}
- AI Intervention Type: {intervention_type}
- Reference Answer (for context): {best_answer}";

fn transcript_template() -> String {
    format!(
        "Rules:\n{}\n\n{}",
        TRANSCRIPT_RULES.join("\n"),
        TRANSCRIPT_SCENARIO_BLOCK
    )
}

pub fn build_transcript_prompt(
    record: &SourceRecord,
    scenario: &Scenario,
    spec: &GenerationSpec,
) -> Prompt {
    let human_count = spec.human_count.to_string();
    let user = template::render(
        &transcript_template(),
        &[
            ("human_count", &human_count),
            ("selected_style", &spec.style),
            ("selected_tone", &spec.tone),
            ("follow_up", &spec.follow_up),
            ("question_title", &record.question_title),
            ("question_content", &record.question_content),
            ("context", &scenario.social_context),
            ("intervention_type", scenario.intervention_type.label()),
            ("best_answer", &record.best_answer),
        ],
    );
    Prompt {
        system: TRANSCRIPT_ROLE.to_string(),
        user,
    }
}

/// Generation controls recovered from a rendered transcript prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptControls {
    pub human_count: u8,
    pub style: String,
    pub tone: String,
    pub follow_up: String,
    pub topic: String,
    pub intervention_type: String,
}

/// Inverse of [`build_transcript_prompt`] for the fields a generator needs.
/// Returns `None` when the user text was not produced by that template.
pub fn extract_prompt_controls(user: &str) -> Option<PromptControls> {
    let between = |start: &str, end: &str| -> Option<String> {
        let from = user.find(start)? + start.len();
        let len = user[from..].find(end)?;
        Some(user[from..from + len].to_string())
    };
    let human_count = between("must feature ", " human participants")?.parse().ok()?;
    let style = between("6. Make the conversation ", " and maintain a ")?;
    let tone = between(" and maintain a ", " tone.\n")?;
    let follow_up = between("and it responds, the user should ", "\n")?;
    let topic = between("- Topic: ", "\n")?;
    let intervention_type = between("- AI Intervention Type: ", "\n")?;
    Some(PromptControls {
        human_count,
        style,
        tone,
        follow_up,
        topic,
        intervention_type,
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscriptError {
    #[error("unknown speaker tag `{0}`")]
    UnknownSpeakerTag(String),
    #[error("transcript has no turns")]
    EmptyTranscript,
    #[error("line {line}: expected `<tag>: <text>`, got `{text}`")]
    MalformedLine { line: usize, text: String },
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
}

/// Parse `tag: text` lines into turns. Blank lines are skipped; whitespace
/// around tag and text is trimmed. Stray list markers (`-`, `*`, dashes)
/// before a tag are ignored.
pub fn parse_transcript(raw: &str) -> Result<Vec<Turn>, TranscriptError> {
    let mut turns = Vec::new();
    for (line_no, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let malformed = || TranscriptError::MalformedLine {
            line: line_no + 1,
            text: line.to_string(),
        };
        let (tag, text) = line.split_once(':').ok_or_else(malformed)?;
        let tag = tag
            .trim()
            .trim_start_matches(|c: char| matches!(c, '-' | '*' | '\u{2013}' | '\u{2014}') || c.is_whitespace())
            .trim_end_matches('*');
        let text = text.trim();
        let speaker: Speaker = tag.parse()?;
        if text.is_empty() {
            return Err(malformed());
        }
        turns.push(Turn {
            speaker,
            text: text.to_string(),
            index: turns.len(),
        });
    }
    if turns.is_empty() {
        return Err(TranscriptError::EmptyTranscript);
    }
    Ok(turns)
}

/// Re-emit turns as `tag: text` lines.
pub fn render_transcript(turns: &[Turn]) -> String {
    let mut out = String::new();
    for t in turns {
        out.push_str(&t.speaker.tag());
        out.push_str(": ");
        out.push_str(&t.text);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code")]
pub enum Violation {
    ExchangeCountBelow20 { exchanges: usize },
    TooManyInterventions { interventions: usize },
    SpeakerCountOutOfRange { distinct: usize, expected: u8 },
    NonContiguousSpeakers { ids: Vec<u32> },
    /// A human turn at `index` is not immediately followed by an agent turn.
    BrokenAlternation { index: usize },
    AgentOpensConversation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code")]
pub enum Warning {
    ZeroInterventions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub exchange_count: usize,
    pub intervention_count: usize,
    pub distinct_humans: usize,
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn accepted(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_transcript(t: &Transcript) -> ValidationReport {
    let turns = &t.turns;
    let exchange_count = turns.len();
    let intervention_count = t.intervention_count();
    let humans: BTreeSet<u32> = turns
        .iter()
        .filter_map(|turn| match turn.speaker {
            Speaker::Human(k) => Some(k),
            Speaker::Agent => None,
        })
        .collect();
    let distinct_humans = humans.len();

    let mut violations = Vec::new();
    if exchange_count < MIN_EXCHANGES {
        violations.push(Violation::ExchangeCountBelow20 {
            exchanges: exchange_count,
        });
    }
    if intervention_count > MAX_INTERVENTIONS {
        violations.push(Violation::TooManyInterventions {
            interventions: intervention_count,
        });
    }
    let in_range = (MIN_HUMANS as usize..=MAX_HUMANS as usize).contains(&distinct_humans);
    if !in_range || distinct_humans != t.spec.human_count as usize {
        violations.push(Violation::SpeakerCountOutOfRange {
            distinct: distinct_humans,
            expected: t.spec.human_count,
        });
    }
    if humans.iter().enumerate().any(|(i, &k)| i as u32 != k) {
        violations.push(Violation::NonContiguousSpeakers {
            ids: humans.iter().copied().collect(),
        });
    }
    if turns.first().is_some_and(|first| first.speaker.is_agent()) {
        violations.push(Violation::AgentOpensConversation);
    }
    for (i, turn) in turns.iter().enumerate() {
        if !turn.speaker.is_agent() && !turns.get(i + 1).is_some_and(|next| next.speaker.is_agent()) {
            violations.push(Violation::BrokenAlternation { index: i });
        }
    }

    let mut warnings = Vec::new();
    if intervention_count == 0 {
        warnings.push(Warning::ZeroInterventions);
    }
    ValidationReport {
        exchange_count,
        intervention_count,
        distinct_humans,
        violations,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSettings {
    pub backend_id: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output: u32,
    /// Re-requests after an unparseable transcript.
    pub max_retries: u32,
}

impl Default for SynthesisSettings {
    fn default() -> Self {
        Self {
            backend_id: "mock".into(),
            model_id: "gpt-4-turbo-preview".into(),
            temperature: 0.9,
            max_output: 4096,
            max_retries: 3,
        }
    }
}

pub fn transcript_request(
    record: &SourceRecord,
    scenario: &Scenario,
    spec: &GenerationSpec,
    settings: &SynthesisSettings,
) -> ChatRequest {
    let prompt = build_transcript_prompt(record, scenario, spec);
    ChatRequest::new(&settings.backend_id, &settings.model_id, prompt.system, prompt.user)
        .with_temperature(settings.temperature)
        .with_max_output(settings.max_output)
}

/// Request and parse one transcript. Unparseable responses are re-requested
/// without the cache; validation is left to the caller.
pub async fn synthesize_transcript<B: ChatBackend + ?Sized>(
    backend: &B,
    conversation_id: &str,
    record: &SourceRecord,
    scenario: &Scenario,
    spec: &GenerationSpec,
    settings: &SynthesisSettings,
) -> Result<Transcript, TranscriptError> {
    let req = transcript_request(record, scenario, spec, settings);
    let mut last_err = TranscriptError::EmptyTranscript;
    for attempt in 0..=settings.max_retries {
        let resp = if attempt == 0 {
            backend.complete(&req).await?
        } else {
            backend.complete_fresh(&req).await?
        };
        match parse_transcript(&resp.text) {
            Ok(turns) => {
                return Ok(Transcript {
                    conversation_id: conversation_id.to_string(),
                    turns,
                    spec: spec.clone(),
                    scenario: scenario.clone(),
                })
            }
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::InterventionType;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn scenario() -> Scenario {
        Scenario {
            record_id: 3,
            social_context: "a book club debating science fiction".into(),
            intervention_type: InterventionType::ConceptDefinition,
        }
    }

    fn record() -> SourceRecord {
        SourceRecord::new(
            3,
            "what is a dyson sphere exactly",
            "i keep hearing about dyson spheres in novels",
            "a dyson sphere is a hypothetical megastructure around a star",
        )
    }

    fn spec_with(humans: u8) -> GenerationSpec {
        GenerationSpec {
            human_count: humans,
            ..sample_spec(11)
        }
    }

    /// `rounds` human/agent pairs cycling through `humans` speakers; agent
    /// speaks at the listed round numbers.
    fn fixture(humans: u8, rounds: usize, speak_at: &[usize]) -> Transcript {
        let mut raw = String::new();
        for r in 0..rounds {
            raw.push_str(&format!("Speaker_{}: point number {r}\n", r % humans as usize));
            if speak_at.contains(&r) {
                raw.push_str(&format!("[AGENT]: here is something useful {r}\n"));
            } else {
                raw.push_str("[AGENT]: >\n");
            }
        }
        Transcript {
            conversation_id: "c".into(),
            turns: parse_transcript(&raw).unwrap(),
            spec: spec_with(humans),
            scenario: scenario(),
        }
    }

    #[test]
    fn sample_spec_is_deterministic() {
        assert_eq!(sample_spec(42), sample_spec(42));
        assert_ne!(sample_spec(1), sample_spec(2));
    }

    #[test]
    fn sample_spec_frequencies() {
        let mut humans: HashMap<u8, usize> = HashMap::new();
        let mut styles = BTreeSet::new();
        let mut tones = BTreeSet::new();
        let mut follow = BTreeSet::new();
        let n = 10_000;
        for seed in 0..n {
            let s = sample_spec(seed);
            *humans.entry(s.human_count).or_default() += 1;
            styles.insert(s.style);
            tones.insert(s.tone);
            follow.insert(s.follow_up);
        }
        for k in MIN_HUMANS..=MAX_HUMANS {
            let freq = humans[&k] as f64 / n as f64;
            assert!((0.16..=0.24).contains(&freq), "human_count {k}: {freq}");
        }
        assert_eq!(humans.len(), 5);
        assert_eq!(styles.len(), 6);
        assert_eq!(tones.len(), 5);
        assert_eq!(follow.len(), 4);
    }

    #[test]
    fn prompt_contents() {
        let spec = spec_with(3);
        let p = build_transcript_prompt(&record(), &scenario(), &spec).text();
        assert!(p.starts_with(TRANSCRIPT_ROLE));
        assert!(p.contains("3 human participants"));
        assert!(p.contains("at least 20 exchanges"));
        assert!(p.contains(&spec.style));
        assert!(p.contains(&spec.tone));
        assert!(p.contains(&spec.follow_up));
        assert!(p.contains("- AI Intervention Type: Concept Definition"));
        assert!(template::placeholders(&p).is_empty());
        for rule in TRANSCRIPT_RULES {
            let fixed = rule.split('{').next().unwrap();
            assert!(p.contains(fixed), "{rule}");
        }
        let static_rules = TRANSCRIPT_RULES.iter().filter(|r| !r.contains('{'));
        for rule in static_rules {
            assert!(p.contains(rule), "{rule}");
        }
    }

    #[test]
    fn prompt_controls_round_trip() {
        for seed in 0..50 {
            let spec = sample_spec(seed);
            let p = build_transcript_prompt(&record(), &scenario(), &spec);
            let c = extract_prompt_controls(&p.user).unwrap();
            assert_eq!(c.human_count, spec.human_count);
            assert_eq!(c.style, spec.style);
            assert_eq!(c.tone, spec.tone);
            assert_eq!(c.follow_up, spec.follow_up);
            assert_eq!(c.topic, record().question_title);
            assert_eq!(c.intervention_type, "Concept Definition");
        }
        assert!(extract_prompt_controls("hello").is_none());
    }

    #[test]
    fn parses_simple_transcript() {
        let turns = parse_transcript("Speaker_0: hi\n[AGENT]: >").unwrap();
        assert_eq!(turns.len(), 2);
        assert_eq!(turns[0].speaker, Speaker::Human(0));
        assert_eq!(turns[0].text, "hi");
        assert_eq!(turns[1].speaker, Speaker::Agent);
        assert!(turns[1].is_silence());
        assert_eq!(turns[1].index, 1);
    }

    #[test]
    fn parses_agent_speech() {
        let turns = parse_transcript("[AGENT]: the key point is X").unwrap();
        assert!(turns[0].is_intervention());
        assert_eq!(turns[0].text, "the key point is X");
    }

    #[test]
    fn text_may_contain_colons() {
        let turns = parse_transcript("Speaker_1: ratio is 3:1 here").unwrap();
        assert_eq!(turns[0].text, "ratio is 3:1 here");
    }

    #[test]
    fn tolerates_list_markers_and_blank_lines() {
        let turns = parse_transcript("\n  Speaker_0:  hi  \n\n--- [AGENT]: >\n- Speaker_1: ok\n").unwrap();
        assert_eq!(
            turns.iter().map(|t| t.speaker).collect::<Vec<_>>(),
            vec![Speaker::Human(0), Speaker::Agent, Speaker::Human(1)]
        );
        assert_eq!(turns[0].text, "hi");
    }

    #[test]
    fn parse_errors() {
        assert_eq!(
            parse_transcript("Moderator: hello"),
            Err(TranscriptError::UnknownSpeakerTag("Moderator".into()))
        );
        assert!(matches!(
            parse_transcript("Speaker_0 hello"),
            Err(TranscriptError::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            parse_transcript("Speaker_0: hi\n[AGENT]:   "),
            Err(TranscriptError::MalformedLine { line: 2, .. })
        ));
        assert_eq!(parse_transcript("  \n\n"), Err(TranscriptError::EmptyTranscript));
        assert!(matches!(
            parse_transcript("Speaker_x: hi"),
            Err(TranscriptError::UnknownSpeakerTag(_))
        ));
    }

    #[test]
    fn golden_fixture_is_accepted() {
        let t = fixture(2, 12, &[4, 9]);
        let report = validate_transcript(&t);
        assert_eq!(report.exchange_count, 24);
        assert_eq!(report.intervention_count, 2);
        assert_eq!(report.distinct_humans, 2);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert!(report.warnings.is_empty());
        assert!(report.accepted());
    }

    #[test]
    fn four_interventions_rejected() {
        let report = validate_transcript(&fixture(2, 12, &[1, 3, 5, 7]));
        assert!(report
            .violations
            .contains(&Violation::TooManyInterventions { interventions: 4 }));
    }

    #[test]
    fn zero_interventions_warn() {
        let report = validate_transcript(&fixture(3, 12, &[]));
        assert!(report.accepted());
        assert_eq!(report.warnings, vec![Warning::ZeroInterventions]);
    }

    #[test]
    fn short_transcript_rejected() {
        let report = validate_transcript(&fixture(2, 9, &[2]));
        assert!(report
            .violations
            .contains(&Violation::ExchangeCountBelow20 { exchanges: 18 }));
    }

    #[test]
    fn speaker_count_must_match_spec() {
        let mut t = fixture(3, 12, &[2]);
        t.spec.human_count = 4;
        let report = validate_transcript(&t);
        assert!(report.violations.contains(&Violation::SpeakerCountOutOfRange {
            distinct: 3,
            expected: 4
        }));

        let mut single = fixture(1, 12, &[2]);
        single.spec.human_count = 1;
        assert!(matches!(
            validate_transcript(&single).violations[..],
            [Violation::SpeakerCountOutOfRange { distinct: 1, .. }]
        ));
    }

    #[test]
    fn gaps_in_speaker_ids() {
        let mut t = fixture(2, 12, &[2]);
        for turn in &mut t.turns {
            if turn.speaker == Speaker::Human(1) {
                turn.speaker = Speaker::Human(2);
            }
        }
        let report = validate_transcript(&t);
        assert!(report
            .violations
            .contains(&Violation::NonContiguousSpeakers { ids: vec![0, 2] }));
    }

    #[test]
    fn consecutive_humans_break_alternation() {
        let mut t = fixture(2, 12, &[2]);
        t.turns.remove(5);
        for (i, turn) in t.turns.iter_mut().enumerate() {
            turn.index = i;
        }
        let report = validate_transcript(&t);
        assert!(report.violations.contains(&Violation::BrokenAlternation { index: 4 }));

        let mut trailing = fixture(2, 12, &[2]);
        trailing.turns.pop();
        let report = validate_transcript(&trailing);
        assert!(report.violations.contains(&Violation::BrokenAlternation { index: 22 }));
    }

    #[test]
    fn agent_may_not_open() {
        let mut t = fixture(2, 12, &[2]);
        t.turns.insert(
            0,
            Turn {
                speaker: Speaker::Agent,
                text: ">".into(),
                index: 0,
            },
        );
        assert!(validate_transcript(&t)
            .violations
            .contains(&Violation::AgentOpensConversation));
    }

    fn turn_strategy() -> impl Strategy<Value = (Speaker, String)> {
        let speaker = prop_oneof![
            (0u32..8).prop_map(Speaker::Human),
            Just(Speaker::Agent),
        ];
        (speaker, "[a-zA-Z0-9][a-zA-Z0-9 ,.?:]{0,40}[a-zA-Z0-9.?]")
    }

    proptest! {
        #[test]
        fn parse_inverts_render(items in prop::collection::vec(turn_strategy(), 1..30)) {
            let turns: Vec<Turn> = items
                .into_iter()
                .enumerate()
                .map(|(index, (speaker, text))| Turn { speaker, text, index })
                .collect();
            let parsed = parse_transcript(&render_transcript(&turns)).unwrap();
            prop_assert_eq!(parsed, turns);
        }
    }
}
