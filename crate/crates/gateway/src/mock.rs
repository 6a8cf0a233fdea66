//! Deterministic offline backend.
//!
//! The stage a request belongs to is recognized from the role line at the
//! start of its system prompt. Every answer is a pure function of the request:
//! the generator is seeded from the request hash.

use std::sync::atomic::{AtomicU64, Ordering};

use async_trait::async_trait;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use speakgate_core::metrics::ZERO_SHOT_SYSTEM_PROMPT;
use speakgate_core::reward::JUDGE_ROLE;
use speakgate_core::scenario::{render_scenario_response, SCENARIO_ROLE};
use speakgate_core::transcript::{extract_prompt_controls, render_transcript, PromptControls, TRANSCRIPT_ROLE, TONE_VARIATIONS};
use speakgate_core::{
    BackendError, ChatBackend, ChatRequest, ChatResponse, InterventionType, Speaker, Turn, SILENT_TOKEN, SPEAK_TOKEN,
};

use crate::cache::request_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Scenario,
    Transcript,
    Decision,
    Judge,
}

pub fn detect_stage(req: &ChatRequest) -> Result<Stage, BackendError> {
    let system = req.system.trim_start();
    if system.starts_with(SCENARIO_ROLE) {
        Ok(Stage::Scenario)
    } else if system.starts_with(TRANSCRIPT_ROLE) {
        Ok(Stage::Transcript)
    } else if system.starts_with(ZERO_SHOT_SYSTEM_PROMPT) {
        Ok(Stage::Decision)
    } else if system.starts_with(JUDGE_ROLE) {
        Ok(Stage::Judge)
    } else {
        Err(BackendError::UnrecognizedStage)
    }
}

/// Probability a mock transcript has no intervention at all.
pub const ZERO_INTERVENTION_RATE: f64 = 0.04;
/// Probability the human turn before an intervention addresses the agent.
pub const DIRECT_ADDRESS_RATE: f64 = 0.35;
/// Probability a transcript contains an explicit disagreement.
pub const DISAGREEMENT_RATE: f64 = 0.3;

#[derive(Debug, Default)]
pub struct MockBackend {
    judge_override: Option<InterventionType>,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Make the judge stage always answer `kind`.
    pub fn with_judge_override(mut self, kind: InterventionType) -> Self {
        self.judge_override = Some(kind);
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn respond(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        let stage = detect_stage(req)?;
        let mut rng = rng_for(req);
        let (text, speak_score) = match stage {
            Stage::Scenario => (mock_scenario(&req.user, &mut rng), None),
            Stage::Transcript => {
                let controls = extract_prompt_controls(&req.user)
                    .ok_or_else(|| BackendError::InvalidRequest("transcript prompt is missing its controls".into()))?;
                (render_transcript(&mock_transcript(&controls, &mut rng)), None)
            }
            Stage::Decision => {
                let (text, p) = mock_decision(&req.user, &mut rng);
                (text, req.want_scores.then(|| p.ln()))
            }
            Stage::Judge => {
                let kind = self.judge_override.unwrap_or_else(|| mock_judge(&req.user, &mut rng));
                (kind.label().to_string(), None)
            }
        };
        Ok(ChatResponse {
            text,
            speak_score,
            cached: false,
            attempts: 1,
        })
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.respond(req)
    }
}

fn rng_for(req: &ChatRequest) -> ChaCha8Rng {
    let key = request_key(req);
    let mut seed = [0u8; 32];
    hex::decode_to_slice(&key, &mut seed).expect("request key is 64 hex chars");
    ChaCha8Rng::from_seed(seed)
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let len = text[from..].find(end)?;
    Some(&text[from..from + len])
}

/// Lowercase words only, at most `max` of them.
fn plain_words(text: &str, max: usize) -> String {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    let words: Vec<&str> = cleaned.split_whitespace().take(max).collect();
    if words.is_empty() {
        "this question".to_string()
    } else {
        words.join(" ")
    }
}

const WHO: [&str; 8] = [
    "A group of college roommates",
    "Three coworkers on a lunch break",
    "A family gathered around the dinner table",
    "Members of a neighborhood book club",
    "A study group in the campus library",
    "Friends on a long road trip",
    "Volunteers at a community center",
    "A team of new hires at orientation",
];

const WHY: [&str; 5] = [
    "are trying to settle a question about",
    "keep coming back to",
    "are comparing what they have heard about",
    "are planning around",
    "started arguing over",
];

fn mock_scenario(user: &str, rng: &mut ChaCha8Rng) -> String {
    let title = between(user, "1. Question Title: ", "\n").unwrap_or("this question");
    let topic = plain_words(title, 12);
    let context = format!("{} {} {}.", WHO.choose(rng).unwrap(), WHY.choose(rng).unwrap(), topic);
    let kind = *InterventionType::ALL.choose(rng).unwrap();
    render_scenario_response(&context, kind)
}

const OPENERS: [&str; 5] = [
    "so i have been wondering about {topic}",
    "ok so {topic} came up again today",
    "can we talk about {topic} for a minute",
    "i keep reading conflicting things about {topic}",
    "has anyone here looked into {topic}",
];

const REMARKS: [&str; 14] = [
    "i always assumed it was pretty simple",
    "that is a fair point but it depends on the situation",
    "my cousin went through the same thing last year",
    "i think we are mixing up two different things",
    "what would you do in that case",
    "that makes sense to me",
    "i am not sure that holds up in every case",
    "we should figure this out before the weekend",
    "i heard something similar on a podcast",
    "does anyone know where that idea comes from",
    "that is what i was trying to say earlier",
    "let me think about that for a second",
    "i guess it comes down to what we care about most",
    "ok but how does that change anything for us",
];

/// Per-tone flavor, indexed like the tone list.
const TONE_REMARKS: [&str; 5] = [
    "this is honestly so exciting to figure out",
    "i wonder what that really means in the long run",
    "from a practical standpoint we need a clear answer",
    "haha yeah same here",
    "wait why is that though",
];

const DISAGREEMENTS: [&str; 3] = [
    "i disagree with that completely",
    "no that sounds wrong to me",
    "hmm actually i see it differently",
];

const FOLLOW_UP_LINES: [&str; 4] = [
    "thanks that clears it up",
    "ok good to know",
    "interesting i did not know that",
    "right anyway back to the main point",
];

const ASKS: [&str; 3] = [
    "[AGENT] what do you think about {topic}",
    "hey [AGENT] can you help us with this",
    "[AGENT] do you know anything about this",
];

fn agent_line(kind: InterventionType, topic: &str) -> String {
    let line = match kind {
        InterventionType::FactualCorrection => {
            "a small correction on {topic} the commonly repeated claim is not accurate and the evidence points the other way"
        }
        InterventionType::ConceptDefinition => {
            "it may help to define the key idea behind {topic} since the term is being used in different ways"
        }
        InterventionType::DataProvision => {
            "for some numbers on {topic} the published figures give a useful baseline to compare against"
        }
        InterventionType::SourceIdentification => {
            "a good place to check on {topic} is the official reference guide which covers this in detail"
        }
        InterventionType::SynthesisReframing => {
            "pulling together what everyone said about {topic} the views fit if we separate the short term from the long term"
        }
    };
    line.replace("{topic}", topic)
}

fn mock_judge(user: &str, rng: &mut ChaCha8Rng) -> InterventionType {
    let utterance = user.rsplit("[AGENT]: ").next().unwrap_or("").to_lowercase();
    let markers = [
        ("correction", InterventionType::FactualCorrection),
        ("define", InterventionType::ConceptDefinition),
        ("numbers", InterventionType::DataProvision),
        ("place to check", InterventionType::SourceIdentification),
        ("pulling together", InterventionType::SynthesisReframing),
    ];
    markers
        .iter()
        .find(|(m, _)| utterance.contains(m))
        .map(|(_, k)| *k)
        .unwrap_or_else(|| *InterventionType::ALL.choose(rng).unwrap())
}

/// A transcript that satisfies every validator rule for `controls.human_count`
/// in 2..=6: 10 to 16 human turns each followed by an agent turn, every
/// speaker present, 0 to 3 interventions.
fn mock_transcript(controls: &PromptControls, rng: &mut ChaCha8Rng) -> Vec<Turn> {
    let humans = controls.human_count.max(1) as u32;
    let topic = plain_words(&controls.topic, 8);
    let kind = InterventionType::from_label(&controls.intervention_type).unwrap_or(InterventionType::DataProvision);
    let tone_line = TONE_VARIATIONS
        .iter()
        .position(|t| *t == controls.tone)
        .map(|i| TONE_REMARKS[i]);

    let rounds: usize = rng.gen_range(10..=16);
    let mut speakers: Vec<u32> = (0..humans).collect();
    speakers.shuffle(rng);
    while speakers.len() < rounds {
        let prev = *speakers.last().unwrap();
        let next = loop {
            let k = rng.gen_range(0..humans);
            if k != prev || humans == 1 {
                break k;
            }
        };
        speakers.push(next);
    }

    let interventions = if rng.gen_bool(ZERO_INTERVENTION_RATE) { 0 } else { rng.gen_range(1..=3) };
    let mut slots: Vec<usize> = (2..rounds).collect();
    slots.shuffle(rng);
    let mut speak_rounds: Vec<usize> = slots.into_iter().take(interventions).collect();
    speak_rounds.sort_unstable();
    let disagreement_round = rng.gen_bool(DISAGREEMENT_RATE).then(|| rng.gen_range(1..rounds));

    let mut turns = Vec::with_capacity(rounds * 2);
    for (r, &who) in speakers.iter().enumerate() {
        let speaks = speak_rounds.contains(&r);
        let human_text = if r == 0 {
            OPENERS.choose(rng).unwrap().replace("{topic}", &topic)
        } else if speaks && rng.gen_bool(DIRECT_ADDRESS_RATE) {
            ASKS.choose(rng).unwrap().replace("{topic}", &topic)
        } else if disagreement_round == Some(r) {
            DISAGREEMENTS.choose(rng).unwrap().to_string()
        } else if r > 0 && speak_rounds.contains(&(r - 1)) {
            FOLLOW_UP_LINES.choose(rng).unwrap().to_string()
        } else {
            match tone_line {
                Some(line) if rng.gen_bool(0.15) => line.to_string(),
                _ => REMARKS.choose(rng).unwrap().to_string(),
            }
        };
        turns.push(Turn {
            speaker: Speaker::Human(who),
            text: human_text,
            index: turns.len(),
        });
        let agent_text = if speaks { agent_line(kind, &topic) } else { SILENT_TOKEN.to_string() };
        turns.push(Turn {
            speaker: Speaker::Agent,
            text: agent_text,
            index: turns.len(),
        });
    }
    turns
}

/// Returns the token and the probability assigned to speaking. Directly
/// addressed contexts lean toward speaking.
fn mock_decision(context: &str, rng: &mut ChaCha8Rng) -> (String, f64) {
    let last_human = context
        .lines()
        .rev()
        .find(|l| l.starts_with("Speaker_"))
        .unwrap_or("")
        .to_lowercase();
    let base = if last_human.contains("[agent]") { 0.75 } else { 0.2 };
    let p: f64 = (base + rng.gen_range(-0.3..0.4f64)).clamp(0.01, 0.99);
    let token = if p >= 0.5 { SPEAK_TOKEN } else { SILENT_TOKEN };
    (token.to_string(), p)
}
