//! `speakgate` command line: the dataset pipeline stages, evaluation and the
//! reward tooling as subcommands sharing one configuration file.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 stage failure.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use speakgate_core::corpus::SourceRecord;
use speakgate_core::jsonl::{read_jsonl, write_jsonl};
use speakgate_core::metrics::{DecisionMode, MetricsReport};
use speakgate_core::reward::{RewardConfig, ScoredDecision};
use speakgate_core::{ChatBackend, Scenario};
use thiserror::Error;

use crate::commands::*;
use crate::config::{Config, ConfigError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_STAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "speakgate", version, about = "Generate, analyze and score speak-or-stay-silent conversation data")]
pub struct Cli {
    /// TOML configuration file; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `mock` or the name of a `[backends]` entry.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Disable the on-disk response cache.
    #[arg(long, global = true)]
    pub no_cache: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter the source corpus.
    Clean {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Attach a social context and intervention type to each selected record.
    Augment {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        conversations: Option<usize>,
    },
    /// Generate and validate one transcript per scenario.
    Synthesize {
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Window transcripts into examples and write the split files.
    BuildDataset {
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Corpus statistics over accepted transcripts.
    Stats {
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions (or zero-shot backend answers) against a dataset file.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Existing predictions; when absent the backend is queried zero-shot.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        mode: Option<DecisionMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-rollout rewards and group-normalized advantages.
    RewardScore {
        #[arg(long)]
        rollouts: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        /// all | acc | acc+soft | acc+soft+type
        #[arg(long)]
        components: Option<String>,
        /// Backend used to judge intervention types of true positives.
        #[arg(long)]
        judge: Option<String>,
        #[arg(long)]
        group_size: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick a speak-score threshold under a false-interruption budget.
    Calibrate {
        #[arg(long)]
        scored: PathBuf,
        #[arg(long)]
        fir_target: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate per-seed reports by lambda.
    AblateReport {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// clean, augment, synthesize, build-dataset and stats in one go.
    Pipeline {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        conversations: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Clean { .. } => "clean",
            Command::Augment { .. } => "augment",
            Command::Synthesize { .. } => "synthesize",
            Command::BuildDataset { .. } => "build-dataset",
            Command::Stats { .. } => "stats",
            Command::Evaluate { .. } => "evaluate",
            Command::RewardScore { .. } => "reward-score",
            Command::Calibrate { .. } => "calibrate",
            Command::AblateReport { .. } => "ablate-report",
            Command::Pipeline { .. } => "pipeline",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} failed: {source:#}")]
    Stage {
        stage: &'static str,
        source: anyhow::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_USAGE,
            CliError::Stage { .. } => EXIT_STAGE,
        }
    }
}

/// Load the config file (if any) and apply command-line overrides.
pub fn effective_config(cli: &Cli) -> Result<Config, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = &cli.backend {
        cfg.backend = b.clone();
    }
    if let Some(p) = cli.parallelism {
        cfg.parallelism = p;
    }
    if cli.no_cache {
        cfg.cache = false;
    }
    match &cli.command {
        Command::Clean { input } | Command::Pipeline { input, .. } if input.is_some() => {
            cfg.corpus.path = input.clone();
        }
        _ => {}
    }
    match &cli.command {
        Command::Augment {
            conversations: Some(n), ..
        }
        | Command::Pipeline {
            conversations: Some(n), ..
        } => cfg.generation.conversations = *n,
        Command::BuildDataset { window: Some(w), .. } => cfg.dataset.window = *w,
        Command::Evaluate { mode: Some(m), .. } => cfg.evaluation.mode = *m,
        Command::RewardScore {
            lambda,
            components,
            group_size,
            ..
        } => {
            if let Some(l) = lambda {
                cfg.reward.lambda = *l;
            }
            if let Some(c) = components {
                cfg.reward.components = c.clone();
            }
            if let Some(g) = group_size {
                cfg.reward.group_size = *g;
            }
        }
        Command::Calibrate { fir_target: Some(t), .. } => cfg.reward.fir_target = *t,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = effective_config(cli)?;
    let stage = cli.command.name();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Stage {
            stage,
            source: e.into(),
        })?;
    runtime
        .block_on(dispatch(&cfg, &cli.command))
        .map_err(|source| CliError::Stage { stage, source })
}

fn backend(cfg: &Config) -> anyhow::Result<Arc<dyn ChatBackend>> {
    build_backend(cfg, &cfg.backend)
}

async fn dispatch(cfg: &Config, command: &Command) -> anyhow::Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    match command {
        Command::Clean { .. } => {
            let out = run_clean(cfg, &layout)?;
            let r = out.report;
            println!(
                "clean: {} rows, {} retained ({} missing, {} short, {} characters)",
                r.input_count, r.retained_count, r.dropped_missing, r.dropped_short, r.dropped_chars
            );
        }
        Command::Augment { records, .. } => {
            let path = records.clone().unwrap_or_else(|| layout.clean_records());
            let records: Vec<SourceRecord> = read_jsonl(&path)?;
            let out = run_augment(cfg, &layout, backend(cfg)?, &records, cfg.generation.conversations).await?;
            println!("augment: {} scenarios, {} failed", out.scenarios.len(), out.failures.len());
        }
        Command::Synthesize { scenarios, records } => {
            let records: Vec<SourceRecord> = read_jsonl(&records.clone().unwrap_or_else(|| layout.clean_records()))?;
            let scenarios: Vec<Scenario> = read_jsonl(&scenarios.clone().unwrap_or_else(|| layout.scenarios()))?;
            let out = run_synthesize(cfg, &layout, backend(cfg)?, &records, &scenarios).await?;
            println!(
                "synthesize: {} accepted, {} rejected, {} uncached requests",
                out.entries.len(),
                out.rejected.len(),
                out.fresh_requests
            );
        }
        Command::BuildDataset { transcripts, .. } => {
            let dir = transcripts.clone().unwrap_or_else(|| layout.transcripts());
            let transcripts = load_transcripts(&dir)?;
            let out = run_build_dataset(cfg, &layout, &transcripts)?;
            for f in &out.splits.files {
                println!("build-dataset: {} {} examples", f.file, f.examples);
            }
        }
        Command::Stats { transcripts, out } => {
            let dir = transcripts.clone().unwrap_or_else(|| layout.transcripts());
            let transcripts = load_transcripts(&dir)?;
            let out = out.clone().unwrap_or_else(|| layout.stats());
            let (stats, _) = run_stats(cfg, &layout, &transcripts, &out)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Evaluate {
            dataset,
            predictions,
            out,
            ..
        } => {
            let backend = match predictions {
                Some(_) => None,
                None => Some(backend(cfg)?),
            };
            let result = run_evaluate(cfg, backend, dataset, predictions.as_deref(), cfg.evaluation.mode).await?;
            let out = out.clone().unwrap_or_else(|| layout.root.join("evaluation/report.json"));
            write_json(&out, &result.report)?;
            if predictions.is_none() {
                write_jsonl(&out.with_file_name("predictions.jsonl"), &result.predictions)?;
            }
            let r = &result.report;
            println!(
                "evaluate: macro_f1 {:.3}  recall {:.3}  fir {:.3}  mir {:.3}  parse_failures {}",
                r.macro_f1, r.speak_recall, r.fir, r.mir, r.parse_failures
            );
        }
        Command::RewardScore { rollouts, judge, out, .. } => {
            let reward: RewardConfig = cfg.reward.reward_config()?;
            let rollouts: Vec<RolloutRecord> = read_jsonl(rollouts)?;
            let judge = match judge.as_deref() {
                None | Some("none") => None,
                Some(name) => Some((build_backend(cfg, name)?, name.to_string(), cfg.reward.judge_model.clone())),
            };
            let scored = run_reward_score(&rollouts, &reward, cfg.reward.group_size, judge).await?;
            let out = out.clone().unwrap_or_else(|| layout.root.join("rewards.jsonl"));
            write_jsonl(&out, &scored)?;
            let mean = scored.iter().map(|s| s.reward.total).sum::<f64>() / scored.len().max(1) as f64;
            println!("reward-score: {} rollouts, mean reward {mean:.4}, written to {}", scored.len(), out.display());
        }
        Command::Calibrate { scored, out, .. } => {
            let scored: Vec<ScoredDecision> = read_jsonl(scored)?;
            let c = run_calibrate(&scored, cfg.reward.fir_target)?;
            if let Some(out) = out {
                write_json(out, &c)?;
            }
            println!("{}", serde_json::to_string(&c)?);
        }
        Command::AblateReport { runs, baseline, out } => {
            let runs = load_ablation_runs(runs)?;
            let baseline: Option<MetricsReport> = baseline.as_deref().map(read_json).transpose()?;
            let report = run_ablate_report(&runs, baseline.as_ref());
            if let Some(out) = out {
                write_json(out, &report)?;
            }
            print!("{}", format_ablation(&report));
        }
        Command::Pipeline { .. } => {
            let out = run_pipeline(cfg, &layout, backend(cfg)?).await?;
            println!(
                "pipeline: {} transcripts accepted, {} rejected, {} examples per variant; outputs in {}",
                out.synthesize.entries.len(),
                out.synthesize.rejected.len(),
                out.dataset.examples.len(),
                layout.root.display()
            );
        }
    }
    Ok(())
}
