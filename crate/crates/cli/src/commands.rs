//! Stage implementations behind the subcommands.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use async_trait::async_trait;
use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use speakgate_core::corpus::{clean_rows, read_delimited, read_delimited_file, select_grounded, CleaningReport, SourceRecord};
use speakgate_core::dataset::{
    build_windows, serialize_examples, split_conversations, read_records, DatasetRecord, Split, SplitAssignment,
    Variant, WindowExample,
};
use speakgate_core::jsonl::{read_jsonl, write_jsonl};
use speakgate_core::metrics::{build_zero_shot_prompt, evaluate, DecisionMode, MetricsReport, Prediction};
use speakgate_core::reward::{
    aggregate_ablation, calibrate_threshold, judge_type, score, AblationRow, AblationRun, Calibration,
    GrpoGroup, RewardBreakdown, RewardConfig, RolloutOutcome, ScoredDecision, DEFAULT_EPS,
};
use speakgate_core::scenario::{augment_record, AugmentSettings, ScenarioError};
use speakgate_core::stats::{analyze, CorpusStats, DisagreementMatcher};
use speakgate_core::transcript::{
    sample_spec, synthesize_transcript, validate_transcript, SynthesisSettings, TranscriptError, Violation, Warning,
};
use speakgate_core::{
    mix_seed, BackendError, ChatBackend, ChatRequest, ChatResponse, DecisionLabel, InterventionType, Scenario,
    Transcript, Turn,
};
use speakgate_gateway::{CachedBackend, MockBackend, RemoteBackend, ResponseCache};

use crate::config::{Config, MOCK_BACKEND};
use crate::manifest::RunManifest;

/// Bundled corpus used when no source file is configured.
pub const FIXTURE_CORPUS: &str = include_str!("../fixtures/corpus.csv");

/// File layout under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn clean_records(&self) -> PathBuf {
        self.root.join("clean/records.jsonl")
    }
    pub fn clean_report(&self) -> PathBuf {
        self.root.join("clean/report.json")
    }
    pub fn scenarios(&self) -> PathBuf {
        self.root.join("augment/scenarios.jsonl")
    }
    pub fn augment_failures(&self) -> PathBuf {
        self.root.join("augment/failures.jsonl")
    }
    pub fn transcripts(&self) -> PathBuf {
        self.root.join("transcripts")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.json")
    }
    pub fn manifests(&self) -> PathBuf {
        self.root.join("manifests")
    }
}

pub const TRANSCRIPT_MANIFEST: &str = "manifest.jsonl";
pub const REJECTED_TRANSCRIPTS: &str = "rejected.jsonl";
pub const SPLIT_MANIFEST: &str = "splits.json";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Counts requests that were not answered from the cache.
pub struct CountingBackend {
    inner: Arc<dyn ChatBackend>,
    fresh: AtomicU64,
    total: AtomicU64,
}

impl CountingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>) -> Self {
        Self {
            inner,
            fresh: AtomicU64::new(0),
            total: AtomicU64::new(0),
        }
    }

    pub fn fresh(&self) -> u64 {
        self.fresh.load(Ordering::SeqCst)
    }

    pub fn total(&self) -> u64 {
        self.total.load(Ordering::SeqCst)
    }

    fn note(&self, resp: &ChatResponse) {
        self.total.fetch_add(1, Ordering::SeqCst);
        if !resp.cached {
            self.fresh.fetch_add(1, Ordering::SeqCst);
        }
    }
}

#[async_trait]
impl ChatBackend for CountingBackend {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let resp = self.inner.complete(req).await?;
        self.note(&resp);
        Ok(resp)
    }

    async fn complete_fresh(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let resp = self.inner.complete_fresh(req).await?;
        self.note(&resp);
        Ok(resp)
    }
}

/// Backend named `name` (`mock` or a `[backends]` entry), behind the
/// response cache when enabled.
pub fn build_backend(cfg: &Config, name: &str) -> Result<Arc<dyn ChatBackend>> {
    let (inner, cache_dir): (Arc<dyn ChatBackend>, PathBuf) = if name == MOCK_BACKEND {
        (Arc::new(MockBackend::new()), cfg.cache_dir())
    } else {
        let bc = cfg
            .backends
            .get(name)
            .ok_or_else(|| anyhow!("unknown backend `{name}`"))?;
        let dir = bc.cache_dir.clone().unwrap_or_else(|| cfg.cache_dir());
        (Arc::new(RemoteBackend::http(bc.clone())?), dir)
    };
    if !cfg.cache {
        return Ok(inner);
    }
    Ok(Arc::new(CachedBackend::new(inner, ResponseCache::open(&cache_dir)?)))
}

fn manifest_for(cfg: &Config, subcommand: &str) -> RunManifest {
    RunManifest::start(subcommand, &cfg.hash(), cfg.seed, &cfg.backend)
}

pub fn save_manifest(layout: &Layout, manifest: RunManifest) -> Result<RunManifest> {
    let m = manifest.finish();
    write_json(&layout.manifests().join(format!("{}.json", m.subcommand)), &m)?;
    Ok(m)
}

// ---- clean ---------------------------------------------------------------

pub struct CleanOutput {
    pub records: Vec<SourceRecord>,
    pub report: CleaningReport,
    pub manifest: RunManifest,
}

pub fn run_clean(cfg: &Config, layout: &Layout) -> Result<CleanOutput> {
    let mut manifest = manifest_for(cfg, "clean");
    let layout_spec = cfg.corpus.layout();
    let rows = match &cfg.corpus.path {
        Some(path) => {
            manifest.input(path);
            read_delimited_file(path, layout_spec).with_context(|| format!("reading corpus {}", path.display()))?
        }
        None => {
            manifest.input("<bundled fixture corpus>");
            read_delimited(FIXTURE_CORPUS.as_bytes(), layout_spec)?
        }
    };
    let (records, report) = clean_rows(rows);
    debug_assert!(report.is_conserved());
    write_jsonl(&layout.clean_records(), &records)?;
    write_json(&layout.clean_report(), &report)?;
    manifest.output(layout.clean_records());
    manifest.output(layout.clean_report());
    manifest.count("input", report.input_count);
    manifest.count("retained", report.retained_count);
    manifest.count("dropped_missing", report.dropped_missing);
    manifest.count("dropped_short", report.dropped_short);
    manifest.count("dropped_chars", report.dropped_chars);
    let manifest = save_manifest(layout, manifest)?;
    Ok(CleanOutput {
        records,
        report,
        manifest,
    })
}

// ---- augment -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub record_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversation_id: Option<String>,
    pub reason: String,
}

pub struct AugmentOutput {
    pub scenarios: Vec<Scenario>,
    pub failures: Vec<StageFailure>,
    pub manifest: RunManifest,
}

pub async fn run_augment(
    cfg: &Config,
    layout: &Layout,
    backend: Arc<dyn ChatBackend>,
    records: &[SourceRecord],
    conversations: usize,
) -> Result<AugmentOutput> {
    let mut manifest = manifest_for(cfg, "augment");
    manifest.input(layout.clean_records());
    let selected = select_grounded(records, conversations)?;
    let settings = AugmentSettings {
        backend_id: cfg.backend.clone(),
        model_id: cfg.generation.scenario_model.clone(),
        temperature: cfg.generation.scenario_temperature,
        max_output: cfg.generation.scenario_max_output,
        max_retries: cfg.generation.max_retries,
    };
    let counter = Arc::new(CountingBackend::new(backend));
    let results: Vec<(u64, Result<Scenario, ScenarioError>)> = stream::iter(selected.iter())
        .map(|record| {
            let counter = Arc::clone(&counter);
            let settings = &settings;
            async move { (record.id, augment_record(counter.as_ref(), record, settings).await) }
        })
        .buffered(cfg.parallelism)
        .collect()
        .await;

    let mut scenarios = Vec::new();
    let mut failures = Vec::new();
    for (record_id, result) in results {
        match result {
            Ok(s) => scenarios.push(s),
            Err(ScenarioError::Backend(e)) => return Err(anyhow!("record {record_id}: {e}")),
            Err(e) => failures.push(StageFailure {
                record_id,
                conversation_id: None,
                reason: e.to_string(),
            }),
        }
    }
    write_jsonl(&layout.scenarios(), &scenarios)?;
    write_jsonl(&layout.augment_failures(), &failures)?;
    manifest.output(layout.scenarios());
    manifest.output(layout.augment_failures());
    manifest.count("selected", selected.len() as u64);
    manifest.count("scenarios", scenarios.len() as u64);
    manifest.count("failed", failures.len() as u64);
    manifest.count("requests", counter.total());
    manifest.count("fresh_requests", counter.fresh());
    let manifest = save_manifest(layout, manifest)?;
    Ok(AugmentOutput {
        scenarios,
        failures,
        manifest,
    })
}

// ---- synthesize ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub conversation_id: String,
    pub record_id: u64,
    pub file: String,
    pub exchange_count: usize,
    pub intervention_count: usize,
    pub distinct_humans: usize,
    #[serde(default)]
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedTranscript {
    pub conversation_id: String,
    pub record_id: u64,
    #[serde(default)]
    pub violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct SynthesizeOutput {
    pub transcripts: Vec<Transcript>,
    pub entries: Vec<TranscriptEntry>,
    pub rejected: Vec<RejectedTranscript>,
    pub fresh_requests: u64,
    pub manifest: RunManifest,
}

pub fn conversation_id(record_id: u64) -> String {
    format!("conv_{record_id:06}")
}

pub async fn run_synthesize(
    cfg: &Config,
    layout: &Layout,
    backend: Arc<dyn ChatBackend>,
    records: &[SourceRecord],
    scenarios: &[Scenario],
) -> Result<SynthesizeOutput> {
    let mut manifest = manifest_for(cfg, "synthesize");
    manifest.input(layout.scenarios());
    manifest.input(layout.clean_records());
    let by_id: HashMap<u64, &SourceRecord> = records.iter().map(|r| (r.id, r)).collect();
    let mut jobs = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let record = by_id
            .get(&s.record_id)
            .ok_or_else(|| anyhow!("scenario for record {} has no source record", s.record_id))?;
        jobs.push((*record, s));
    }
    jobs.sort_by_key(|(r, _)| r.id);

    let settings = SynthesisSettings {
        backend_id: cfg.backend.clone(),
        model_id: cfg.generation.transcript_model.clone(),
        temperature: cfg.generation.transcript_temperature,
        max_output: cfg.generation.transcript_max_output,
        max_retries: cfg.generation.max_retries,
    };
    let counter = Arc::new(CountingBackend::new(backend));
    let results: Vec<(u64, String, Result<Transcript, TranscriptError>)> = stream::iter(jobs)
        .map(|(record, scenario)| {
            let counter = Arc::clone(&counter);
            let settings = &settings;
            let seed = cfg.seed;
            async move {
                let id = conversation_id(record.id);
                let spec = sample_spec(mix_seed(seed, record.id));
                let t = synthesize_transcript(counter.as_ref(), &id, record, scenario, &spec, settings).await;
                (record.id, id, t)
            }
        })
        .buffered(cfg.parallelism)
        .collect()
        .await;

    let dir = layout.transcripts();
    std::fs::create_dir_all(&dir)?;
    let mut transcripts = Vec::new();
    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    for (record_id, id, result) in results {
        let t = match result {
            Ok(t) => t,
            Err(TranscriptError::Backend(e)) => return Err(anyhow!("{id}: {e}")),
            Err(e) => {
                rejected.push(RejectedTranscript {
                    conversation_id: id,
                    record_id,
                    violations: Vec::new(),
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let report = validate_transcript(&t);
        if !report.accepted() {
            rejected.push(RejectedTranscript {
                conversation_id: id,
                record_id,
                violations: report.violations,
                error: None,
            });
            continue;
        }
        let file = format!("{id}.json");
        write_json(&dir.join(&file), &t)?;
        entries.push(TranscriptEntry {
            conversation_id: id,
            record_id,
            file,
            exchange_count: report.exchange_count,
            intervention_count: report.intervention_count,
            distinct_humans: report.distinct_humans,
            warnings: report.warnings,
        });
        transcripts.push(t);
    }
    write_jsonl(&dir.join(TRANSCRIPT_MANIFEST), &entries)?;
    write_jsonl(&dir.join(REJECTED_TRANSCRIPTS), &rejected)?;
    manifest.output(&dir);
    manifest.count("accepted", entries.len() as u64);
    manifest.count("rejected", rejected.len() as u64);
    manifest.count("requests", counter.total());
    manifest.count("fresh_requests", counter.fresh());
    let manifest = save_manifest(layout, manifest)?;
    Ok(SynthesizeOutput {
        transcripts,
        entries,
        rejected,
        fresh_requests: counter.fresh(),
        manifest,
    })
}

/// Accepted transcripts listed in a transcript directory's manifest, in order.
pub fn load_transcripts(dir: &Path) -> Result<Vec<Transcript>> {
    let entries: Vec<TranscriptEntry> = read_jsonl(&dir.join(TRANSCRIPT_MANIFEST))?;
    entries
        .iter()
        .map(|e| read_json::<Transcript>(&dir.join(&e.file)))
        .collect()
}

// ---- build-dataset -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFileSummary {
    pub variant: Variant,
    pub split: Split,
    pub file: String,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub window: usize,
    pub conversations: BTreeMap<Split, usize>,
    pub files: Vec<SplitFileSummary>,
    pub assignment: SplitAssignment,
}

pub struct DatasetOutput {
    pub examples: Vec<WindowExample>,
    pub splits: SplitManifest,
    pub manifest: RunManifest,
}

pub fn run_build_dataset(cfg: &Config, layout: &Layout, transcripts: &[Transcript]) -> Result<DatasetOutput> {
    let mut manifest = manifest_for(cfg, "build-dataset");
    manifest.input(layout.transcripts());
    let window = cfg.dataset.window;
    let examples: Vec<WindowExample> = transcripts.iter().flat_map(|t| build_windows(t, window)).collect();
    let ids: Vec<String> = transcripts.iter().map(|t| t.conversation_id.clone()).collect();
    let assignment = split_conversations(&ids, cfg.dataset.ratios(), cfg.seed)?;
    let dir = layout.dataset();
    let mut files = Vec::new();
    for variant in [Variant::Token, Variant::Dialogue] {
        for f in serialize_examples(&examples, variant, &assignment, &dir)? {
            manifest.output(&f.path);
            manifest.count(&format!("{}_{}", variant.name(), f.split.name()), f.count as u64);
            files.push(SplitFileSummary {
                variant,
                split: f.split,
                file: f.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                examples: f.count,
            });
        }
    }
    let splits = SplitManifest {
        seed: cfg.seed,
        window,
        conversations: assignment.sizes(),
        files,
        assignment,
    };
    write_json(&dir.join(SPLIT_MANIFEST), &splits)?;
    manifest.output(dir.join(SPLIT_MANIFEST));
    manifest.count("examples", examples.len() as u64);
    let manifest = save_manifest(layout, manifest)?;
    Ok(DatasetOutput {
        examples,
        splits,
        manifest,
    })
}

// ---- stats ---------------------------------------------------------------

pub fn run_stats(cfg: &Config, layout: &Layout, transcripts: &[Transcript], out: &Path) -> Result<(CorpusStats, RunManifest)> {
    let mut manifest = manifest_for(cfg, "stats");
    manifest.input(layout.transcripts());
    let stats = analyze(transcripts, &DisagreementMatcher::default())?;
    write_json(out, &stats)?;
    manifest.output(out);
    manifest.count("conversations", stats.conv_count);
    manifest.count("speak_turns", stats.speak_turns);
    let manifest = save_manifest(layout, manifest)?;
    Ok((stats, manifest))
}

// ---- pipeline ------------------------------------------------------------

pub struct PipelineOutput {
    pub clean: CleaningReport,
    pub synthesize: SynthesizeOutput,
    pub dataset: DatasetOutput,
    pub stats: CorpusStats,
    pub manifest: RunManifest,
}

pub async fn run_pipeline(cfg: &Config, layout: &Layout, backend: Arc<dyn ChatBackend>) -> Result<PipelineOutput> {
    let mut manifest = manifest_for(cfg, "pipeline");
    let clean = run_clean(cfg, layout).context("clean")?;
    manifest.absorb(&clean.manifest);
    let augment = run_augment(cfg, layout, Arc::clone(&backend), &clean.records, cfg.generation.conversations)
        .await
        .context("augment")?;
    manifest.absorb(&augment.manifest);
    let synthesize = run_synthesize(cfg, layout, backend, &clean.records, &augment.scenarios)
        .await
        .context("synthesize")?;
    manifest.absorb(&synthesize.manifest);
    let dataset = run_build_dataset(cfg, layout, &synthesize.transcripts).context("build-dataset")?;
    manifest.absorb(&dataset.manifest);
    let (stats, stats_manifest) =
        run_stats(cfg, layout, &synthesize.transcripts, &layout.stats()).context("stats")?;
    manifest.absorb(&stats_manifest);
    let manifest = manifest.finish();
    write_json(&layout.root.join("manifest.json"), &manifest)?;
    Ok(PipelineOutput {
        clean: clean.report,
        synthesize,
        dataset,
        stats,
        manifest,
    })
}

// ---- evaluate ------------------------------------------------------------

/// Zero-shot predictions for every record, `parallelism` requests at a time.
pub async fn predict(
    backend: Arc<dyn ChatBackend>,
    backend_id: &str,
    model_id: &str,
    records: &[DatasetRecord],
    parallelism: usize,
) -> Result<Vec<Prediction>> {
    stream::iter(records)
        .map(|rec| {
            let backend = Arc::clone(&backend);
            async move {
                let (system, user) = build_zero_shot_prompt(&rec.context_turns());
                let req = ChatRequest::new(backend_id, model_id, system, user)
                    .with_max_output(1)
                    .with_scores(true);
                let resp = backend.complete(&req).await?;
                Ok::<_, BackendError>(Prediction {
                    conversation_id: rec.conversation_id.clone(),
                    decision_index: rec.decision_index,
                    output_text: resp.text,
                    speak_score: resp.speak_score,
                })
            }
        })
        .buffered(parallelism.max(1))
        .try_collect()
        .await
        .map_err(Into::into)
}

pub struct EvaluateOutput {
    pub report: MetricsReport,
    pub predictions: Vec<Prediction>,
}

pub async fn run_evaluate(
    cfg: &Config,
    backend: Option<Arc<dyn ChatBackend>>,
    dataset: &Path,
    predictions: Option<&Path>,
    mode: DecisionMode,
) -> Result<EvaluateOutput> {
    let records = read_records(dataset)?;
    let predictions = match predictions {
        Some(p) => read_jsonl::<Prediction>(p)?,
        None => {
            let backend = backend.ok_or_else(|| anyhow!("no predictions file and no backend"))?;
            predict(backend, &cfg.backend, &cfg.evaluation.model, &records, cfg.parallelism).await?
        }
    };
    let report = evaluate(&records, &predictions, mode, cfg.evaluation.parse_failures)?;
    Ok(EvaluateOutput { report, predictions })
}

// ---- reward-score --------------------------------------------------------

/// One rollout to score. `context` and `utterance` are only needed when a
/// judge has to label a true positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    #[serde(default)]
    pub group_id: Option<String>,
    pub predicted: DecisionLabel,
    pub gold: DecisionLabel,
    #[serde(default)]
    pub turns_early: Option<u32>,
    #[serde(default)]
    pub gold_type: Option<InterventionType>,
    #[serde(default)]
    pub judged_type: Option<InterventionType>,
    #[serde(default)]
    pub utterance: Option<String>,
    #[serde(default)]
    pub context: Vec<speakgate_core::dataset::ContextMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRollout {
    pub index: usize,
    pub group: String,
    #[serde(default)]
    pub judged_type: Option<InterventionType>,
    pub reward: RewardBreakdown,
    /// `None` when the rollout's group has fewer than two members.
    pub advantage: Option<f64>,
}

/// Group keys: explicit `group_id`, else consecutive chunks of `group_size`.
fn group_keys(rollouts: &[RolloutRecord], group_size: usize) -> Vec<String> {
    rollouts
        .iter()
        .enumerate()
        .map(|(i, r)| r.group_id.clone().unwrap_or_else(|| format!("chunk_{}", i / group_size)))
        .collect()
}

pub async fn run_reward_score(
    rollouts: &[RolloutRecord],
    reward: &RewardConfig,
    group_size: usize,
    judge: Option<(Arc<dyn ChatBackend>, String, String)>,
) -> Result<Vec<ScoredRollout>> {
    reward.validate()?;
    let mut judged = Vec::with_capacity(rollouts.len());
    for (i, r) in rollouts.iter().enumerate() {
        let tp = r.predicted.is_speak() && r.gold.is_speak();
        let mut kind = r.judged_type.filter(|_| tp);
        if kind.is_none() && tp && reward.enable_type_bonus {
            if let (Some((backend, backend_id, model_id)), Some(utterance)) = (&judge, &r.utterance) {
                let context: Vec<Turn> = r
                    .context
                    .iter()
                    .enumerate()
                    .map(|(index, m)| Turn {
                        speaker: m.speaker,
                        text: m.text.clone(),
                        index,
                    })
                    .collect();
                kind = Some(
                    judge_type(backend.as_ref(), backend_id, model_id, &context, utterance)
                        .await
                        .with_context(|| format!("judging rollout {i}"))?,
                );
            }
        }
        judged.push(kind);
    }

    let keys = group_keys(rollouts, group_size);
    let mut scored = Vec::with_capacity(rollouts.len());
    for (i, r) in rollouts.iter().enumerate() {
        let outcome = RolloutOutcome {
            predicted: r.predicted,
            gold: r.gold,
            turns_early: r.turns_early.filter(|_| r.predicted.is_speak()),
            judged_type: judged[i],
            gold_type: r.gold_type,
        };
        let breakdown = score(&outcome, reward).with_context(|| format!("rollout {i}"))?;
        scored.push(ScoredRollout {
            index: i,
            group: keys[i].clone(),
            judged_type: judged[i],
            reward: breakdown,
            advantage: None,
        });
    }

    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        members.entry(k.as_str()).or_default().push(i);
    }
    for idx in members.values() {
        if idx.len() < 2 {
            continue;
        }
        let rewards: Vec<f64> = idx.iter().map(|&i| scored[i].reward.total).collect();
        let group = GrpoGroup::from_rewards(rewards, DEFAULT_EPS)?;
        for (&i, a) in idx.iter().zip(group.advantages) {
            scored[i].advantage = Some(a);
        }
    }
    Ok(scored)
}

// ---- calibrate / ablate-report -------------------------------------------

pub fn run_calibrate(scored: &[ScoredDecision], fir_target: f64) -> Result<Calibration> {
    Ok(calibrate_threshold(scored, fir_target)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub baseline_mir: Option<f64>,
    pub rows: Vec<AblationRow>,
}

/// Every `*.json` file under `runs` (sorted by name) as one run.
pub fn load_ablation_runs(runs: &Path) -> Result<Vec<AblationRun>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(runs)
        .with_context(|| format!("listing {}", runs.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no run reports in {}", runs.display());
    }
    files.iter().map(|p| read_json(p)).collect()
}

pub fn run_ablate_report(runs: &[AblationRun], baseline: Option<&MetricsReport>) -> AblationReport {
    AblationReport {
        baseline_mir: baseline.map(|b| b.mir),
        rows: aggregate_ablation(runs, baseline),
    }
}

pub fn format_ablation(report: &AblationReport) -> String {
    let mut out = String::from("lambda  runs  macro_f1          recall            fir               mir               delta_mir\n");
    for r in &report.rows {
        let cell = |m: &speakgate_core::reward::MeanStd| format!("{:.3} +/- {:.3}", m.mean, m.std);
        out.push_str(&format!(
            "{:<7} {:<5} {:<17} {:<17} {:<17} {:<17} {}\n",
            r.lambda,
            r.runs,
            cell(&r.macro_f1),
            cell(&r.speak_recall),
            cell(&r.fir),
            cell(&r.mir),
            r.delta_mir.map(|d| format!("{d:+.3}")).unwrap_or_else(|| "-".into()),
        ));
    }
    out
}
