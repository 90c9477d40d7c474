//! Training loop: claim sampling, the post sub-loop, annotation, reward
//! finalization, policy updates, fine-tune hooks and resumable run state.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rumorsel_core::annotate::{
    annotate_claim, annotate_post, Annotator, AnnotatorError, FineTuneAck, FineTuneBatch, FineTuneExample,
    FineTuneOrigin, LabelOrigin, Task,
};
use rumorsel_core::checkpoint;
use rumorsel_core::corpus::{Claim, Dataset, SeedSplit};
use rumorsel_core::labels::{ClassLabel, Distribution, StanceLabel, VeracityLabel};
use rumorsel_core::policy::{
    reinforce_update, sample_action, Action, ClaimEpisode, Level, OptimizerState, PolicyParams, Step,
};
use rumorsel_core::prompt::{
    build_stance_prompt, build_veracity_prompt, format_stance_target, format_veracity_target, StanceAnnotation,
    VeracityAnnotation,
};
use rumorsel_core::reward::{
    labeled_claim_reward, unlabeled_claim_reward, ReferenceStanceStats, Reward, RewardOutcome, SimilarityMode,
};
use rumorsel_core::selection::{ClaimSampler, PostSampler, TerminationTracker};
use rumorsel_core::state::{
    build_state, claim_instance_text, fnv1a, post_instance_text, ContextAccumulator, Embedder,
};

use crate::config::{ConfigError, RewardTiming, RunConfig};
use crate::runlog::{now_ms, AnnotationEvent, LogEvent, RunLog, StepEvent};

pub const STATE_VERSION: u32 = 1;
pub const STATE_FILE: &str = "run_state.json";
pub const POLICY_FILE: &str = "policy.ckpt";
/// Consecutive transport-failure aborts treated as an outage.
pub const OUTAGE_ABORTS: usize = 3;
/// Reason attached to human veracity labels in fine-tune targets.
pub const HUMAN_LABEL_REASON: &str = "human-labeled seed claim";

const EMBED_CACHE_LIMIT: usize = 200_000;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("claim {claim_id}: veracity annotation failed: {source}")]
    ClaimAborted { claim_id: String, source: AnnotatorError },
    #[error("backend outage: {aborts} consecutive claims aborted; run state is resumable")]
    Outage { aborts: usize },
    #[error("embedding failed: {0}")]
    Embed(#[from] rumorsel_core::state::EmbedError),
    #[error(transparent)]
    State(#[from] rumorsel_core::state::StateError),
    #[error(transparent)]
    Policy(#[from] rumorsel_core::policy::PolicyError),
    #[error(transparent)]
    Reward(#[from] rumorsel_core::reward::RewardError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run state {path}: {message}")]
    RunState { path: PathBuf, message: String },
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("run state does not match dataset: {0}")]
    Mismatch(String),
}

/// Deterministic request key from run seed, epoch, claim, post and task.
pub fn request_key(seed: u64, epoch: u32, claim_id: &str, post: Option<usize>, tag: &str) -> u64 {
    let mut bytes = Vec::with_capacity(64);
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(&epoch.to_le_bytes());
    bytes.extend_from_slice(claim_id.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(&post.map_or(u64::MAX, |p| p as u64).to_le_bytes());
    bytes.extend_from_slice(tag.as_bytes());
    fnv1a(&bytes)
}

/// Annotates `indices` of `claim` with up to `max_in_flight` requests
/// outstanding; results come back in the order of `indices`.
pub fn annotate_posts_ordered(
    backend: &dyn Annotator,
    claim: &Claim,
    indices: &[usize],
    keys: &[u64],
    max_in_flight: usize,
) -> Vec<Result<StanceAnnotation, AnnotatorError>> {
    let workers = max_in_flight.max(1).min(indices.len());
    if workers <= 1 {
        return indices.iter().zip(keys).map(|(&i, &k)| annotate_post(backend, claim, &claim.posts[i], k)).collect();
    }
    let slots: Vec<Mutex<Option<Result<StanceAnnotation, AnnotatorError>>>> =
        indices.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                if j >= indices.len() {
                    break;
                }
                let r = annotate_post(backend, claim, &claim.posts[indices[j]], keys[j]);
                *slots[j].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().expect("slot lock").expect("every slot filled")).collect()
}

/// Everything one claim produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub claim_id: String,
    pub is_seed: bool,
    pub claim_step: Step,
    pub claim_outcome: RewardOutcome,
    /// Sub-steps in sampling order, with the post each one decided on.
    pub post_steps: Vec<Step>,
    pub post_ids: Vec<String>,
    pub post_outcomes: Vec<RewardOutcome>,
    pub rv_annotation: VeracityAnnotation,
    pub retained_posts: Vec<(String, StanceAnnotation)>,
    pub posts_annotated: usize,
    pub posts_failed: usize,
    /// Post-level run of +1 rewards reached its threshold.
    pub post_termination: bool,
    /// Fine-tune records this claim contributes (already filtered by the claim action).
    pub finetune: Vec<FineTuneExample>,
}

impl Trajectory {
    pub fn episode(&self) -> ClaimEpisode {
        ClaimEpisode { claim_step: self.claim_step.clone(), post_steps: self.post_steps.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EpochReport {
    pub epoch: u32,
    pub claims_processed: usize,
    pub claims_aborted: usize,
    pub claims_retained: usize,
    pub posts_annotated: usize,
    pub posts_failed: usize,
    pub posts_retained: usize,
    pub posts_discarded: usize,
    pub claim_reward_sum: i64,
    pub post_reward_sum: i64,
    pub post_steps: usize,
    pub mean_claim_reward: f64,
    pub mean_post_reward: f64,
    pub updates: usize,
    pub skipped_updates: usize,
    pub termination: bool,
    pub post_terminations: usize,
    pub finetune_stance: usize,
    pub finetune_veracity: usize,
    pub stance_ack: Option<FineTuneAck>,
    pub veracity_ack: Option<FineTuneAck>,
    pub wall_time_secs: f64,
}

impl EpochReport {
    /// The report with wall time zeroed, for run-to-run comparison.
    pub fn timeless(&self) -> Self {
        Self { wall_time_secs: 0.0, ..self.clone() }
    }

    fn finish_means(&mut self) {
        let done = self.claims_processed;
        self.mean_claim_reward = if done == 0 { 0.0 } else { self.claim_reward_sum as f64 / done as f64 };
        self.mean_post_reward =
            if self.post_steps == 0 { 0.0 } else { self.post_reward_sum as f64 / self.post_steps as f64 };
    }
}

/// Resumable progress. Policy parameters and optimizer moments live in the
/// binary checkpoint next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub epoch: u32,
    pub dataset_claims: usize,
    pub seeds: BTreeSet<String>,
    pub pool: BTreeSet<String>,
    /// Sampler of the epoch in progress; `None` between epochs.
    pub claim_sampler: Option<ClaimSampler>,
    pub claim_context: ContextAccumulator,
    pub termination: TerminationTracker,
    pub refs: ReferenceStanceStats,
    pub buffer: Vec<ClaimEpisode>,
    pub baseline: f64,
    pub consecutive_aborts: usize,
    pub stance_records: Vec<FineTuneExample>,
    pub veracity_records: Vec<FineTuneExample>,
    /// Selection of the last completed epoch.
    pub last_selection: Vec<FineTuneExample>,
    pub current: EpochReport,
    pub reports: Vec<EpochReport>,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub params: PolicyParams,
    pub optimizer: OptimizerState,
    pub progress: Progress,
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    version: u32,
    crc32: u32,
    policy: String,
    policy_crc32: u32,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), EngineError> {
    let io = |source| EngineError::Io { path: path.to_path_buf(), source };
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

impl RunState {
    pub fn new(cfg: &RunConfig, dataset: &Dataset, split: &SeedSplit, dim: usize) -> Self {
        let params = PolicyParams::init(3 * dim, cfg.hidden_dim, request_key(cfg.rng_seed, 0, "", None, "policy-init"));
        let planned = cfg.max_epochs as u64 * dataset.claims.len() as u64;
        let mut optimizer = OptimizerState::new(params.num_params(), planned);
        optimizer.learning_rate = cfg.learning_rate;
        optimizer.warmup_fraction = cfg.warmup;
        optimizer.schedule = cfg.lr_schedule;
        optimizer.batch_size = cfg.batch_size;
        optimizer.max_epochs = cfg.max_epochs;
        let progress = Progress {
            epoch: 0,
            dataset_claims: dataset.claims.len(),
            seeds: split.seeds.clone(),
            pool: split.pool.clone(),
            claim_sampler: None,
            claim_context: ContextAccumulator::new(dim),
            termination: TerminationTracker::new(cfg.n_termination),
            refs: ReferenceStanceStats::default(),
            buffer: Vec::new(),
            baseline: 0.0,
            consecutive_aborts: 0,
            stance_records: Vec::new(),
            veracity_records: Vec::new(),
            last_selection: Vec::new(),
            current: EpochReport::default(),
            reports: Vec::new(),
            terminated: false,
        };
        Self { params, optimizer, progress }
    }

    pub fn finished(&self, cfg: &RunConfig) -> bool {
        self.progress.terminated || self.progress.epoch >= cfg.max_epochs
    }

    /// Writes `policy.ckpt` and `run_state.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), EngineError> {
        let ckpt = checkpoint::encode(&self.params, &self.optimizer)
            .map_err(|e| EngineError::RunState { path: dir.join(POLICY_FILE), message: e.to_string() })?;
        let body = serde_json::to_string(&self.progress)
            .map_err(|e| EngineError::RunState { path: dir.join(STATE_FILE), message: e.to_string() })?;
        let header = StateHeader {
            version: STATE_VERSION,
            crc32: crc32fast::hash(body.as_bytes()),
            policy: POLICY_FILE.to_string(),
            policy_crc32: crc32fast::hash(&ckpt),
        };
        write_atomic(&dir.join(POLICY_FILE), &ckpt)?;
        let mut text = serde_json::to_string(&header).expect("header serializes");
        text.push('\n');
        text.push_str(&body);
        text.push('\n');
        write_atomic(&dir.join(STATE_FILE), text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self, EngineError> {
        let path = dir.join(STATE_FILE);
        let bad = |message: String| EngineError::RunState { path: path.clone(), message };
        let text = std::fs::read_to_string(&path).map_err(|source| EngineError::Io { path: path.clone(), source })?;
        let (head, body) = text.split_once('\n').ok_or_else(|| bad("missing header line".into()))?;
        let body = body.trim_end_matches('\n');
        let header: StateHeader = serde_json::from_str(head).map_err(|e| bad(format!("bad header: {e}")))?;
        if header.version != STATE_VERSION {
            return Err(bad(format!("version {} is not supported (expected {STATE_VERSION})", header.version)));
        }
        if crc32fast::hash(body.as_bytes()) != header.crc32 {
            return Err(bad("checksum mismatch".into()));
        }
        let progress: Progress = serde_json::from_str(body).map_err(|e| bad(format!("bad state: {e}")))?;
        let ckpt_path = dir.join(&header.policy);
        let bytes = std::fs::read(&ckpt_path).map_err(|source| EngineError::Io { path: ckpt_path.clone(), source })?;
        if crc32fast::hash(&bytes) != header.policy_crc32 {
            return Err(bad("policy checkpoint does not belong to this run state".into()));
        }
        let (params, optimizer) = checkpoint::decode(&bytes)
            .map_err(|e| EngineError::RunState { path: ckpt_path.clone(), message: e.to_string() })?;
        Ok(Self { params, optimizer, progress })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpochOutcome {
    Completed(EpochReport),
    /// Stopped after the requested number of claims; resumable.
    Paused { claims_done: usize },
}

pub struct Engine<'a> {
    cfg: RunConfig,
    dataset: &'a Dataset,
    sd: &'a dyn Annotator,
    rv: &'a dyn Annotator,
    embedder: &'a dyn Embedder,
    cache: HashMap<String, Vec<f64>>,
    log: RunLog,
}

impl<'a> Engine<'a> {
    pub fn new(
        cfg: &RunConfig,
        dataset: &'a Dataset,
        sd: &'a dyn Annotator,
        rv: &'a dyn Annotator,
        embedder: &'a dyn Embedder,
    ) -> Self {
        Self { cfg: cfg.clone(), dataset, sd, rv, embedder, cache: HashMap::new(), log: RunLog::sink() }
    }

    pub fn with_log(mut self, log: RunLog) -> Self {
        self.log = log;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn mode(&self) -> SimilarityMode {
        self.cfg.similarity_mode()
    }

    fn emit(&mut self, event: LogEvent) {
        if let Err(e) = self.log.write(&event) {
            log::warn!("run log write failed: {e}");
        }
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.emit(LogEvent::Warning { ts: now_ms(), message });
    }

    fn embed(&mut self, text: &str) -> Result<Vec<f64>, EngineError> {
        if let Some(v) = self.cache.get(text) {
            return Ok(v.clone());
        }
        let v = self.embedder.embed(text)?.values;
        if self.cache.len() >= EMBED_CACHE_LIMIT {
            self.cache.clear();
        }
        self.cache.insert(text.to_string(), v.clone());
        Ok(v)
    }

    fn key(&self, epoch: u32, claim_id: &str, post: Option<usize>, tag: &str) -> u64 {
        request_key(self.cfg.rng_seed, epoch, claim_id, post, tag)
    }

    /// Runs the post sub-loop, veracity annotation, claim action and reward
    /// finalization for one claim.
    pub fn process_claim(
        &mut self,
        claim: &Claim,
        is_seed: bool,
        state: &mut RunState,
    ) -> Result<Trajectory, EngineError> {
        let epoch = state.progress.epoch;
        let cid = claim.claim_id.as_str();
        let truth = if is_seed { claim.veracity } else { None };
        let mode = self.mode();
        let claim_vec = self.embed(&claim.text)?;
        let dim = claim_vec.len();

        let mut sampler = PostSampler::new(claim.posts.len(), self.cfg.epsilon, self.key(epoch, cid, None, "posts"));
        let cap = self.cfg.max_posts.min(claim.posts.len());
        let order: Vec<usize> = (0..cap).map(|_| sampler.sample().expect("cap bounded by pool")).collect();
        let keys: Vec<u64> = order.iter().map(|&i| self.key(epoch, cid, Some(i), "stance")).collect();
        let annotations = annotate_posts_ordered(self.sd, claim, &order, &keys, self.cfg.sd.max_in_flight);

        let mut rng = ChaCha8Rng::seed_from_u64(self.key(epoch, cid, None, "actions"));
        let mut ctx = ContextAccumulator::new(dim);
        let mut post_steps = Vec::new();
        let mut post_ids = Vec::new();
        let mut selected_at = Vec::new();
        let mut retained: Vec<(usize, StanceAnnotation)> = Vec::new();
        let mut incremental_outcomes = Vec::new();
        let mut post_tracker = TerminationTracker::new(self.cfg.n_termination_post);
        let mut current_pred: Option<VeracityAnnotation> = None;
        let mut posts_failed = 0;

        for (&idx, ann) in order.iter().zip(annotations) {
            let post = &claim.posts[idx];
            let ann = match ann {
                Ok(a) => a,
                Err(e) => {
                    posts_failed += 1;
                    self.warn(format!("claim {cid} post {}: skipped: {e}", post.post_id));
                    continue;
                }
            };
            self.emit(LogEvent::Annotation(AnnotationEvent {
                ts: now_ms(),
                epoch,
                claim_id: cid.to_string(),
                post_id: post.post_id.clone(),
                text: post.text.clone(),
                stance: ann.label.name().to_string(),
                explanation: ann.explanation.clone(),
            }));
            // references follow every annotated post of a seed claim, so they
            // do not depend on what the policy keeps
            if let Some(v) = truth {
                state.progress.refs.update(v, &ann.distribution);
            }
            let instance = self.embed(&post_instance_text(post, &ann))?;
            let s = build_state(&claim_vec, &ctx, &instance)?;
            let step = sample_action(&state.params, s, Level::Post, &mut rng)?;
            if step.action == Action::Retain {
                ctx.update(&instance)?;
                retained.push((idx, ann));
            }
            post_steps.push(step);
            post_ids.push(post.post_id.clone());
            selected_at.push(retained.len());

            if self.cfg.reward_timing == RewardTiming::Incremental {
                let j = post_steps.len() - 1;
                if post_steps[j].action == Action::Retain || current_pred.is_none() {
                    let key = self.key(epoch, cid, Some(idx), "veracity-step");
                    let listed = retained.iter().map(|(i, a)| (&claim.posts[*i], a));
                    match annotate_claim(self.rv, claim, listed, key) {
                        Ok(p) => current_pred = Some(p),
                        Err(e) => self.warn(format!("claim {cid}: incremental veracity call failed: {e}")),
                    }
                }
                let outcome = match &current_pred {
                    None => RewardOutcome::cold(),
                    Some(pred) => self.post_reward(truth, pred, &retained, &state.progress.refs, mode)?,
                };
                incremental_outcomes.push(outcome);
                if post_tracker.observe(outcome.value) {
                    break;
                }
            }
        }

        let key = self.key(epoch, cid, None, "veracity");
        let listed = retained.iter().map(|(i, a)| (&claim.posts[*i], a));
        let rv = annotate_claim(self.rv, claim, listed, key)
            .map_err(|source| EngineError::ClaimAborted { claim_id: cid.to_string(), source })?;

        let claim_instance = self.embed(&claim_instance_text(claim, &rv))?;
        let s = build_state(&claim_vec, &state.progress.claim_context, &claim_instance)?;
        let mut claim_step = sample_action(&state.params, s, Level::Claim, &mut rng)?;
        if claim_step.action == Action::Retain {
            state.progress.claim_context.update(&claim_instance)?;
        }

        let claim_outcome = match truth {
            Some(t) => labeled_claim_reward(&rv, t, mode)?,
            None => unlabeled_claim_reward(&dists(&retained), rv.label, &state.progress.refs, mode)?,
        };
        claim_step.reward = Some(claim_outcome.value);

        let post_outcomes = match self.cfg.reward_timing {
            RewardTiming::Incremental => incremental_outcomes,
            RewardTiming::Terminal => match truth {
                Some(_) => vec![claim_outcome; post_steps.len()],
                None => {
                    let all = dists(&retained);
                    selected_at
                        .iter()
                        .map(|&n| unlabeled_claim_reward(&all[..n], rv.label, &state.progress.refs, mode))
                        .collect::<Result<Vec<_>, _>>()?
                }
            },
        };
        for (step, o) in post_steps.iter_mut().zip(&post_outcomes) {
            step.reward = Some(o.value);
        }
        let post_termination = match self.cfg.reward_timing {
            RewardTiming::Incremental => post_tracker.fired(),
            RewardTiming::Terminal => post_outcomes.iter().any(|o| post_tracker.observe(o.value)),
        };

        let mut finetune = Vec::new();
        if claim_step.action == Action::Retain {
            for (i, a) in &retained {
                let post = &claim.posts[*i];
                finetune.push(FineTuneExample {
                    task: Task::Stance,
                    prompt: build_stance_prompt(claim, post),
                    target: format_stance_target(a.label, &a.explanation),
                    claim_id: cid.to_string(),
                    post_id: Some(post.post_id.clone()),
                    label_origin: LabelOrigin::Machine,
                });
            }
        }
        let veracity_prompt = || build_veracity_prompt(claim, retained.iter().map(|(i, a)| (&claim.posts[*i], a)));
        if let Some(t) = truth {
            finetune.push(FineTuneExample {
                task: Task::Veracity,
                prompt: veracity_prompt(),
                target: format_veracity_target(t, HUMAN_LABEL_REASON),
                claim_id: cid.to_string(),
                post_id: None,
                label_origin: LabelOrigin::Human,
            });
        } else if claim_step.action == Action::Retain {
            finetune.push(FineTuneExample {
                task: Task::Veracity,
                prompt: veracity_prompt(),
                target: format_veracity_target(rv.label, &rv.explanation),
                claim_id: cid.to_string(),
                post_id: None,
                label_origin: LabelOrigin::Machine,
            });
        }

        Ok(Trajectory {
            claim_id: cid.to_string(),
            is_seed,
            claim_step,
            claim_outcome,
            posts_annotated: cap - posts_failed,
            posts_failed,
            post_steps,
            post_ids,
            post_outcomes,
            rv_annotation: rv,
            retained_posts: retained.into_iter().map(|(i, a)| (claim.posts[i].post_id.clone(), a)).collect(),
            post_termination,
            finetune,
        })
    }

    fn post_reward(
        &self,
        truth: Option<VeracityLabel>,
        pred: &VeracityAnnotation,
        retained: &[(usize, StanceAnnotation)],
        refs: &ReferenceStanceStats,
        mode: SimilarityMode,
    ) -> Result<RewardOutcome, EngineError> {
        Ok(match truth {
            Some(t) => labeled_claim_reward(pred, t, mode)?,
            None => unlabeled_claim_reward(&dists(retained), pred.label, refs, mode)?,
        })
    }

    fn start_epoch(&self, state: &mut RunState) {
        let p = &mut state.progress;
        let seed = request_key(self.cfg.rng_seed, p.epoch, "", None, "claims");
        p.claim_sampler = Some(ClaimSampler::new(&p.seeds, &p.pool, self.cfg.epsilon, seed));
        p.claim_context = ContextAccumulator::new(state.params.input_dim() / 3);
        p.buffer.clear();
        p.stance_records.clear();
        p.veracity_records.clear();
        p.consecutive_aborts = 0;
        p.current = EpochReport { epoch: p.epoch, ..EpochReport::default() };
    }

    fn log_trajectory(&mut self, epoch: u32, t: &Trajectory) {
        for ((step, id), o) in t.post_steps.iter().zip(&t.post_ids).zip(&t.post_outcomes) {
            self.emit(LogEvent::Step(StepEvent {
                ts: now_ms(),
                epoch,
                claim_id: t.claim_id.clone(),
                post_id: Some(id.clone()),
                level: Level::Post,
                action: step.action,
                reward: step.reward,
                cosine: o.cosine,
                p_retain: step.p_retain,
            }));
        }
        self.emit(LogEvent::Step(StepEvent {
            ts: now_ms(),
            epoch,
            claim_id: t.claim_id.clone(),
            post_id: None,
            level: Level::Claim,
            action: t.claim_step.action,
            reward: t.claim_step.reward,
            cosine: t.claim_outcome.cosine,
            p_retain: t.claim_step.p_retain,
        }));
    }

    fn update_policy(&mut self, state: &mut RunState, claim_reward: Reward) -> Result<(), EngineError> {
        let p = &mut state.progress;
        if let Some(w) = self.cfg.update_window {
            let excess = p.buffer.len().saturating_sub(w);
            p.buffer.drain(..excess);
        }
        let baseline = if self.cfg.baseline { p.baseline } else { 0.0 };
        let outcome = reinforce_update(&mut state.params, &mut state.optimizer, &p.buffer, baseline)?;
        if outcome.applied {
            p.current.updates += 1;
        } else {
            p.current.skipped_updates += 1;
            self.warn(format!("non-finite gradient; update {} skipped", state.optimizer.step + 1));
        }
        let p = &mut state.progress;
        if self.cfg.baseline {
            let m = self.cfg.baseline_momentum;
            p.baseline = m * p.baseline + (1.0 - m) * claim_reward.value();
        }
        Ok(())
    }

    /// Processes claims until the pool is exhausted or termination fires, then
    /// sends the epoch's selection to both fine-tune hooks. With `stop_after`,
    /// returns early once that many claims of the epoch have been consumed.
    pub fn run_epoch(&mut self, state: &mut RunState, stop_after: Option<usize>) -> Result<EpochOutcome, EngineError> {
        if state.progress.dataset_claims != self.dataset.claims.len() {
            return Err(EngineError::Mismatch(format!(
                "state was built for {} claims, dataset has {}",
                state.progress.dataset_claims,
                self.dataset.claims.len()
            )));
        }
        if state.progress.claim_sampler.is_none() {
            self.start_epoch(state);
        }
        let started = Instant::now();
        let epoch = state.progress.epoch;
        let mut terminated = false;
        loop {
            let done = state.progress.current.claims_processed + state.progress.current.claims_aborted;
            if stop_after.is_some_and(|n| done >= n) {
                state.progress.current.wall_time_secs += started.elapsed().as_secs_f64();
                return Ok(EpochOutcome::Paused { claims_done: done });
            }
            let sampler = state.progress.claim_sampler.as_mut().expect("epoch started");
            let Ok(cid) = sampler.sample() else { break };
            let ci = self
                .dataset
                .index_of(&cid)
                .ok_or_else(|| EngineError::Mismatch(format!("claim {cid} is not in the dataset")))?;
            let dataset: &'a Dataset = self.dataset;
            let claim = &dataset.claims[ci];
            let is_seed = state.progress.seeds.contains(&cid) && claim.veracity.is_some();
            match self.process_claim(claim, is_seed, state) {
                Ok(t) => {
                    self.log_trajectory(epoch, &t);
                    let p = &mut state.progress;
                    p.consecutive_aborts = 0;
                    let r = &mut p.current;
                    r.claims_processed += 1;
                    r.claims_retained += usize::from(t.claim_step.action == Action::Retain);
                    r.posts_annotated += t.posts_annotated;
                    r.posts_failed += t.posts_failed;
                    r.posts_retained += t.retained_posts.len();
                    r.posts_discarded += t.post_steps.len() - t.retained_posts.len();
                    r.post_steps += t.post_steps.len();
                    r.post_reward_sum += t.post_steps.iter().map(|s| reward_i(s.reward)).sum::<i64>();
                    r.claim_reward_sum += reward_i(t.claim_step.reward);
                    r.post_terminations += usize::from(t.post_termination);
                    for ex in &t.finetune {
                        match ex.task {
                            Task::Stance => p.stance_records.push(ex.clone()),
                            Task::Veracity => p.veracity_records.push(ex.clone()),
                        }
                    }
                    p.buffer.push(t.episode());
                    let claim_reward = t.claim_outcome.value;
                    let fired = p.termination.observe(claim_reward);
                    self.update_policy(state, claim_reward)?;
                    if fired {
                        terminated = true;
                        break;
                    }
                }
                Err(EngineError::ClaimAborted { claim_id, source }) => {
                    let transport = matches!(source, AnnotatorError::Transport(_));
                    self.warn(format!("claim {claim_id} aborted: {source}"));
                    let p = &mut state.progress;
                    p.current.claims_aborted += 1;
                    p.consecutive_aborts = if transport { p.consecutive_aborts + 1 } else { 0 };
                    if p.consecutive_aborts >= OUTAGE_ABORTS {
                        p.current.wall_time_secs += started.elapsed().as_secs_f64();
                        return Err(EngineError::Outage { aborts: p.consecutive_aborts });
                    }
                }
                Err(e) => return Err(e),
            }
        }

        let stance_ack = self.fine_tune(self.sd, Task::Stance, &state.progress.stance_records);
        let veracity_ack = self.fine_tune(self.rv, Task::Veracity, &state.progress.veracity_records);
        let p = &mut state.progress;
        let mut report = std::mem::take(&mut p.current);
        report.termination = terminated;
        report.finetune_stance = p.stance_records.len();
        report.finetune_veracity = p.veracity_records.len();
        report.stance_ack = stance_ack;
        report.veracity_ack = veracity_ack;
        report.wall_time_secs += started.elapsed().as_secs_f64();
        report.finish_means();
        p.last_selection = p.stance_records.drain(..).chain(p.veracity_records.drain(..)).collect();
        p.claim_sampler = None;
        p.buffer.clear();
        p.reports.push(report.clone());
        p.epoch += 1;
        p.terminated = terminated;
        if let Err(e) = self.log.flush() {
            log::warn!("run log flush failed: {e}");
        }
        Ok(EpochOutcome::Completed(report))
    }

    fn fine_tune(&mut self, backend: &dyn Annotator, task: Task, examples: &[FineTuneExample]) -> Option<FineTuneAck> {
        let batch = FineTuneBatch { task, origin: FineTuneOrigin::Selection, examples };
        match backend.fine_tune(&batch) {
            Ok(ack) => Some(ack),
            Err(e) => {
                self.warn(format!("{} fine-tune failed: {e}", task.as_str()));
                None
            }
        }
    }
}

fn dists(retained: &[(usize, StanceAnnotation)]) -> Vec<Distribution> {
    retained.iter().map(|(_, a)| a.distribution).collect()
}

fn reward_i(r: Option<Reward>) -> i64 {
    r.map_or(0, |r| r.value() as i64)
}

/// One line of a stance pretraining corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub target: String,
    pub text: String,
    pub label: String,
    #[serde(default)]
    pub reason: String,
}

fn pretrain_stance(label: &str) -> Option<StanceLabel> {
    match label.trim().to_ascii_lowercase().as_str() {
        "favor" | "favour" => Some(StanceLabel::Support),
        "against" => Some(StanceLabel::Deny),
        "none" | "neutral" => Some(StanceLabel::Comment),
        other => StanceLabel::from_token(other),
    }
}

/// Reads a stance pretraining corpus into fine-tune examples. Labels may use
/// the four stance names or FAVOR/AGAINST/NONE.
pub fn load_pretrain_corpus(path: &Path) -> Result<Vec<FineTuneExample>, EngineError> {
    let text = std::fs::read_to_string(path).map_err(|_| {
        ConfigError::field("pretrain_corpus", format!("cannot read {}", path.display()))
    })?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |m: String| ConfigError::field("pretrain_corpus", format!("{}:{}: {m}", path.display(), n + 1));
        let rec: PretrainRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let label = pretrain_stance(&rec.label).ok_or_else(|| bad(format!("unknown stance {:?}", rec.label)))?;
        let claim = Claim { claim_id: format!("pretrain-{n}"), text: rec.target, veracity: None, posts: vec![] };
        let post = rumorsel_core::corpus::Post {
            post_id: format!("pretrain-{n}-p"),
            text: rec.text,
            author: String::new(),
            timestamp: 0,
            reply_to: None,
            stance: None,
        };
        out.push(FineTuneExample {
            task: Task::Stance,
            prompt: build_stance_prompt(&claim, &post),
            target: format_stance_target(label, &rec.reason),
            claim_id: claim.claim_id.clone(),
            post_id: Some(post.post_id),
            label_origin: LabelOrigin::Human,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainAcks {
    pub stance: Option<FineTuneAck>,
    pub veracity: Option<FineTuneAck>,
}

/// Forwards pretraining data to both backends before training: the stance
/// corpus to SD and the seed claims' human labels to RV. Failures of the
/// calls themselves are warnings; an unusable corpus path is a config error.
pub fn pretrain_hooks(
    cfg: &RunConfig,
    dataset: &Dataset,
    seeds: &BTreeSet<String>,
    sd: &dyn Annotator,
    rv: &dyn Annotator,
) -> Result<PretrainAcks, EngineError> {
    use crate::backend::BackendKind;
    let stance_examples = match (&cfg.pretrain_corpus, cfg.sd.kind) {
        (Some(p), _) => load_pretrain_corpus(p)?,
        (None, BackendKind::Http) => {
            return Err(ConfigError::field("pretrain_corpus", "required when sd.kind = \"http\"").into());
        }
        (None, BackendKind::Oracle) => Vec::new(),
    };
    let veracity_examples: Vec<FineTuneExample> = dataset
        .claims
        .iter()
        .filter(|c| seeds.contains(&c.claim_id))
        .filter_map(|c| {
            c.veracity.map(|v| FineTuneExample {
                task: Task::Veracity,
                prompt: build_veracity_prompt(c, std::iter::empty()),
                target: format_veracity_target(v, HUMAN_LABEL_REASON),
                claim_id: c.claim_id.clone(),
                post_id: None,
                label_origin: LabelOrigin::Human,
            })
        })
        .collect();
    let call = |backend: &dyn Annotator, task: Task, examples: &[FineTuneExample]| {
        match backend.fine_tune(&FineTuneBatch { task, origin: FineTuneOrigin::Pretrain, examples }) {
            Ok(a) => Some(a),
            Err(e) => {
                log::warn!("{} pretraining request failed: {e}", task.as_str());
                None
            }
        }
    };
    Ok(PretrainAcks {
        stance: call(sd, Task::Stance, &stance_examples),
        veracity: call(rv, Task::Veracity, &veracity_examples),
    })
}
