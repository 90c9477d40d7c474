//! Command-line driver. Every command writes under `--out` with fixed file
//! names so runs can be diffed and resumed.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rumorsel_core::annotate::{Annotator, FineTuneAck};
use rumorsel_core::corpus::{generate_synthetic, split_seeds, Dataset, SynthConfig};

use crate::config::{EndpointOverrides, RunConfig};
use crate::convert::{convert_threads, Labels};
use crate::dataset::{load_dataset, write_dataset};
use crate::engine::{pretrain_hooks, request_key, Engine, EngineError, EpochOutcome, RunState, STATE_FILE};
use crate::evaluate::{evaluate, EvalOptions, PolicyMode};
use crate::export::{export_embeddings, export_finetune_set};
use crate::runlog::RunLog;

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "run.jsonl";
pub const REPORTS_FILE: &str = "epoch_reports.json";
pub const FINETUNE_FILE: &str = "finetune.jsonl";
pub const PRETRAIN_FILE: &str = "pretrain.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SYNTH_FILE: &str = "synthetic.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const CONVERTED_FILE: &str = "dataset.jsonl";

#[derive(Debug, Parser)]
#[command(name = "rumorsel", version, about = "Select LLM stance and veracity annotations with a learned policy")]
pub struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the selection policy.
    Train(TrainArgs),
    /// Score stance and veracity on a labeled test set.
    Evaluate(EvaluateArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
    /// Embed every annotated post of a run.
    ExportEmbeddings(RunDirArgs),
    /// Write the last epoch's selected fine-tune examples of a run.
    ExportFinetune(RunDirArgs),
    /// Convert RumorEval-style thread directories to a claim file.
    Convert(ConvertArgs),
    /// Print dataset statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct EndpointArgs {
    #[arg(long, env = "SD_ENDPOINT")]
    pub sd_endpoint: Option<String>,
    #[arg(long, env = "RV_ENDPOINT")]
    pub rv_endpoint: Option<String>,
    #[arg(long, env = "EMBED_ENDPOINT")]
    pub embed_endpoint: Option<String>,
}

impl EndpointArgs {
    fn overrides(&self) -> EndpointOverrides {
        EndpointOverrides {
            sd: self.sd_endpoint.clone(),
            rv: self.rv_endpoint.clone(),
            embed: self.embed_endpoint.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the run state in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Save and stop once this many claims of the current epoch are done.
    #[arg(long)]
    pub pause_after: Option<usize>,
    #[command(flatten)]
    pub endpoints: EndpointArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Run directory whose policy filters posts; all posts are used without it.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Retain iff p > 0.5 instead of sampling.
    #[arg(long)]
    pub greedy: bool,
    /// Score stance only on retained posts.
    #[arg(long)]
    pub stance_on_retained: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub endpoints: EndpointArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML synthetic-corpus config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub claims: Option<usize>,
    #[arg(long)]
    pub posts: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunDirArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub endpoints: EndpointArgs,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Root containing thread directories.
    #[arg(long)]
    pub input: PathBuf,
    /// Stance/veracity key files; may be repeated.
    #[arg(long)]
    pub labels: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
}

/// How a train invocation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStatus {
    Finished { epochs: u32, terminated: bool },
    Paused { claims_done: usize },
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => {
            match train(&a)? {
                TrainStatus::Finished { epochs, terminated } => {
                    println!("trained {epochs} epoch(s){}", if terminated { ", stopped by termination" } else { "" });
                }
                TrainStatus::Paused { claims_done } => println!("paused after {claims_done} claim(s)"),
            }
            Ok(())
        }
        Command::Evaluate(a) => {
            let report = evaluate_cmd(&a)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Synth(a) => {
            let path = synth(&a)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::ExportEmbeddings(a) => {
            let n = export_embeddings_cmd(&a)?;
            println!("wrote {n} embedding(s)");
            Ok(())
        }
        Command::ExportFinetune(a) => {
            let n = export_finetune_cmd(&a)?;
            println!("wrote {n} example(s)");
            Ok(())
        }
        Command::Convert(a) => {
            let d = convert_cmd(&a)?;
            println!("{}", serde_json::to_string_pretty(&d.stats())?);
            Ok(())
        }
        Command::Stats(a) => {
            let d = load_dataset(&a.dataset)?;
            println!("{}", serde_json::to_string_pretty(&d.stats())?);
            Ok(())
        }
    }
}

fn resolved_config(path: &Path, endpoints: &EndpointArgs) -> anyhow::Result<RunConfig> {
    Ok(RunConfig::load_with(path, &endpoints.overrides())?)
}

/// Annotators for a run. Oracle seeds derive from `rng_seed` so train and
/// evaluate agree.
pub fn build_backends(cfg: &RunConfig) -> (Box<dyn Annotator>, Box<dyn Annotator>) {
    let sd = cfg.sd.build(cfg.smoothing_alpha, request_key(cfg.rng_seed, 0, "", None, "sd-backend"));
    let rv = cfg.rv.build(cfg.smoothing_alpha, request_key(cfg.rng_seed, 0, "", None, "rv-backend"));
    (sd, rv)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Serialize)]
struct PretrainFile {
    stance: Option<FineTuneAck>,
    veracity: Option<FineTuneAck>,
}

fn save_progress(state: &RunState, out: &Path) -> anyhow::Result<()> {
    state.save(out)?;
    write_json(&out.join(REPORTS_FILE), &state.progress.reports)?;
    export_finetune_set(&state.progress.last_selection, &out.join(FINETUNE_FILE))?;
    Ok(())
}

pub fn train(args: &TrainArgs) -> anyhow::Result<TrainStatus> {
    let mut cfg = resolved_config(&args.config, &args.endpoints)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let dataset = load_dataset(&cfg.dataset)?;
    let (sd, rv) = build_backends(&cfg);
    let embedder = cfg.embed.build();

    let mut state = if args.resume {
        if !out.join(STATE_FILE).exists() {
            bail!("nothing to resume: {} not found", out.join(STATE_FILE).display());
        }
        RunState::load(&out)?
    } else {
        let split = split_seeds(&dataset, cfg.seed_fraction, cfg.rng_seed)?;
        let acks = pretrain_hooks(&cfg, &dataset, &split.seeds, &*sd, &*rv)?;
        write_json(&out.join(PRETRAIN_FILE), &PretrainFile { stance: acks.stance, veracity: acks.veracity })?;
        if out.join(LOG_FILE).exists() {
            std::fs::remove_file(out.join(LOG_FILE))?;
        }
        RunState::new(&cfg, &dataset, &split, cfg.embed.dim)
    };
    std::fs::write(out.join(CONFIG_FILE), cfg.to_toml_string())?;

    let log = RunLog::append(&out.join(LOG_FILE)).with_context(|| format!("cannot open {}", out.join(LOG_FILE).display()))?;
    let mut engine = Engine::new(&cfg, &dataset, &*sd, &*rv, &*embedder).with_log(log);
    while !state.finished(&cfg) {
        match engine.run_epoch(&mut state, args.pause_after) {
            Ok(EpochOutcome::Completed(r)) => {
                log::info!(
                    "epoch {}: claims {} retained {} mean R {:.3} mean r {:.3}",
                    r.epoch, r.claims_processed, r.claims_retained, r.mean_claim_reward, r.mean_post_reward
                );
                save_progress(&state, &out)?;
            }
            Ok(EpochOutcome::Paused { claims_done }) => {
                save_progress(&state, &out)?;
                return Ok(TrainStatus::Paused { claims_done });
            }
            Err(e @ EngineError::Outage { .. }) => {
                save_progress(&state, &out)?;
                return Err(anyhow::Error::new(e).context(format!("run state saved to {}; resume with --resume", out.display())));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(TrainStatus::Finished { epochs: state.progress.epoch, terminated: state.progress.terminated })
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> anyhow::Result<crate::evaluate::EvaluationReport> {
    let cfg = resolved_config(&args.config, &args.endpoints)?;
    let test = load_dataset(&args.test)?;
    let (sd, rv) = build_backends(&cfg);
    let embedder = cfg.embed.build();
    let state = args.checkpoint.as_deref().map(RunState::load).transpose()?;
    if let Some(s) = &state {
        if s.params.input_dim() != 3 * embedder.dim() {
            bail!("checkpoint expects {}-dim states, embedder gives {}", s.params.input_dim(), 3 * embedder.dim());
        }
    }
    let opts = EvalOptions {
        policy: state.as_ref().map(|s| &s.params),
        mode: if args.greedy { PolicyMode::Greedy } else { PolicyMode::Sample },
        stance_on_retained: args.stance_on_retained,
        max_in_flight: cfg.sd.max_in_flight,
        rng_seed: cfg.rng_seed,
    };
    let report = evaluate(&test, &*sd, &*rv, &*embedder, &opts)?;
    std::fs::create_dir_all(&args.out)?;
    write_json(&args.out.join(METRICS_FILE), &report)?;
    Ok(report)
}

pub fn synth(args: &SynthArgs) -> anyhow::Result<PathBuf> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("cannot parse {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(n) = args.claims {
        cfg.n_claims = n;
    }
    if let Some(n) = args.posts {
        cfg.posts_per_claim = n;
    }
    if let Some(f) = args.noise {
        cfg.noise_post_fraction = f;
    }
    if let Some(s) = args.seed {
        cfg.rng_seed = s;
    }
    let dataset = generate_synthetic(&cfg)?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join(SYNTH_FILE);
    write_dataset(&dataset, &path)?;
    Ok(path)
}

fn run_config(args: &RunDirArgs) -> anyhow::Result<RunConfig> {
    resolved_config(&args.run.join(CONFIG_FILE), &args.endpoints)
}

pub fn export_embeddings_cmd(args: &RunDirArgs) -> anyhow::Result<usize> {
    let cfg = run_config(args)?;
    let embedder = cfg.embed.build();
    let out = args.out.clone().unwrap_or_else(|| args.run.clone());
    std::fs::create_dir_all(&out)?;
    Ok(export_embeddings(&args.run.join(LOG_FILE), &*embedder, &out.join(EMBEDDINGS_FILE))?)
}

pub fn export_finetune_cmd(args: &RunDirArgs) -> anyhow::Result<usize> {
    let state = RunState::load(&args.run)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.clone());
    std::fs::create_dir_all(&out)?;
    Ok(export_finetune_set(&state.progress.last_selection, &out.join(FINETUNE_FILE))?)
}

pub fn convert_cmd(args: &ConvertArgs) -> anyhow::Result<Dataset> {
    let labels = Labels::load(&args.labels)?;
    let dataset = convert_threads(&args.input, &labels)?;
    std::fs::create_dir_all(&args.out)?;
    write_dataset(&dataset, &args.out.join(CONVERTED_FILE))?;
    Ok(dataset)
}
