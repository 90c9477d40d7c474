mod common;

use std::sync::Mutex;
use std::time::Duration;

use common::{dead_endpoint, StubServer};
use rumorsel::backend::BackendKind;
use rumorsel::config::RunConfig;
use rumorsel::engine::{pretrain_hooks, Engine, EngineError, EpochOutcome, RunState};
use rumorsel::http::HttpAnnotator;
use rumorsel::runlog::{read_log, LogEvent, RunLog};
use rumorsel_core::annotate::{
    AnnotationRequest, Annotator, AnnotatorError, BackendReply, FineTuneAck, FineTuneBatch, FineTuneOrigin, Task,
};
use rumorsel_core::corpus::{generate_synthetic, split_seeds, Dataset, SeedSplit, SynthConfig};
use rumorsel_core::oracle::{OracleAnnotator, OracleConfig};
use rumorsel_core::policy::{Action, PolicyParams};
use rumorsel_core::prompt::NO_RETAINED_POSTS;
use rumorsel_core::state::HashedEmbedder;
use serde_json::json;

const DIM: usize = 16;

/// Wraps an annotator and records prompts and fine-tune calls.
struct Recording {
    inner: OracleAnnotator,
    fine_tune_via: Option<HttpAnnotator>,
    fail_complete: bool,
    prompts: Mutex<Vec<(Task, String)>>,
    fine_tunes: Mutex<Vec<(Task, FineTuneOrigin, usize)>>,
}

impl Recording {
    fn new(seed: u64) -> Self {
        Self::with(OracleConfig { seed, ..OracleConfig::default() })
    }

    fn with(cfg: OracleConfig) -> Self {
        Self {
            inner: OracleAnnotator::new(cfg),
            fine_tune_via: None,
            fail_complete: false,
            prompts: Mutex::new(Vec::new()),
            fine_tunes: Mutex::new(Vec::new()),
        }
    }

    fn prompts(&self, task: Task) -> Vec<String> {
        self.prompts.lock().unwrap().iter().filter(|(t, _)| *t == task).map(|(_, p)| p.clone()).collect()
    }

    fn fine_tunes(&self) -> Vec<(Task, FineTuneOrigin, usize)> {
        self.fine_tunes.lock().unwrap().clone()
    }
}

impl Annotator for Recording {
    fn complete(&self, req: &AnnotationRequest<'_>) -> Result<BackendReply, AnnotatorError> {
        self.prompts.lock().unwrap().push((req.task, req.prompt.to_string()));
        if self.fail_complete {
            return Err(AnnotatorError::Transport("connection refused".into()));
        }
        self.inner.complete(req)
    }

    fn fine_tune(&self, batch: &FineTuneBatch<'_>) -> Result<FineTuneAck, AnnotatorError> {
        self.fine_tunes.lock().unwrap().push((batch.task, batch.origin, batch.examples.len()));
        match &self.fine_tune_via {
            Some(http) => http.fine_tune(batch),
            None => self.inner.fine_tune(batch),
        }
    }
}

fn synth(n_claims: usize, posts: usize) -> Dataset {
    generate_synthetic(&SynthConfig { n_claims, posts_per_claim: posts, ..SynthConfig::default() }).unwrap()
}

/// Every post carries its veracity's modal stance.
fn consistent_synth(n_claims: usize, posts: usize) -> Dataset {
    generate_synthetic(&SynthConfig {
        n_claims,
        posts_per_claim: posts,
        noise_post_fraction: 0.0,
        stance_given_veracity: [[0.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
        ..SynthConfig::default()
    })
    .unwrap()
}

fn config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.embed.dim = DIM;
    cfg.hidden_dim = 8;
    cfg.max_epochs = 2;
    cfg.rng_seed = 11;
    cfg
}

fn fresh(cfg: &RunConfig, d: &Dataset) -> (RunState, SeedSplit) {
    let split = split_seeds(d, cfg.seed_fraction, cfg.rng_seed).unwrap();
    (RunState::new(cfg, d, &split, DIM), split)
}

fn completed(o: EpochOutcome) -> rumorsel::engine::EpochReport {
    match o {
        EpochOutcome::Completed(r) => r,
        EpochOutcome::Paused { .. } => panic!("epoch paused"),
    }
}

#[test]
fn three_claims_three_updates_one_fine_tune_each() {
    let d = synth(3, 6);
    let cfg = config();
    let (sd, rv, emb) = (Recording::new(1), Recording::new(2), HashedEmbedder::new(DIM));
    let (mut state, _) = fresh(&cfg, &d);
    let before = state.params.clone();
    let r = completed(Engine::new(&cfg, &d, &sd, &rv, &emb).run_epoch(&mut state, None).unwrap());
    assert_eq!(r.claims_processed, 3);
    assert_eq!(r.updates, 3);
    assert_eq!(state.optimizer.step, 3);
    assert_ne!(state.params, before);
    assert_eq!(sd.fine_tunes(), vec![(Task::Stance, FineTuneOrigin::Selection, r.finetune_stance)]);
    assert_eq!(rv.fine_tunes(), vec![(Task::Veracity, FineTuneOrigin::Selection, r.finetune_veracity)]);
    assert_eq!(r.stance_ack, Some(FineTuneAck::Skipped));
    assert_eq!(r.posts_retained + r.posts_discarded, r.post_steps);
    assert_eq!(r.post_steps, 18);
    assert_eq!(state.progress.epoch, 1);
}

#[test]
fn unit_claim_rewards_stop_the_run() {
    let d = consistent_synth(20, 10);
    let mut cfg = config();
    cfg.seed_fraction = 1.0;
    cfg.n_termination = 5;
    let perfect = OracleConfig { accuracy: 1.0, ..OracleConfig::default() };
    let (sd, rv, emb) = (Recording::with(perfect.clone()), Recording::with(perfect), HashedEmbedder::new(DIM));
    let (mut state, _) = fresh(&cfg, &d);
    let r = completed(Engine::new(&cfg, &d, &sd, &rv, &emb).run_epoch(&mut state, None).unwrap());
    assert!(r.termination);
    assert_eq!(r.claims_processed, 5);
    assert_eq!(r.claim_reward_sum, 5);
    assert!(state.progress.terminated);
    assert!(state.finished(&cfg));
    // one fine-tune per backend even when stopping early
    assert_eq!(sd.fine_tunes().len(), 1);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let d = synth(8, 7);
    let cfg = config();
    let emb = HashedEmbedder::new(DIM);
    let (sd, rv) = (Recording::new(1), Recording::new(2));

    let (mut straight, _) = fresh(&cfg, &d);
    let mut engine = Engine::new(&cfg, &d, &sd, &rv, &emb);
    let mut expected = Vec::new();
    while !straight.finished(&cfg) {
        expected.push(completed(engine.run_epoch(&mut straight, None).unwrap()).timeless());
    }

    let dir = tempfile::tempdir().unwrap();
    let (mut first, _) = fresh(&cfg, &d);
    let paused = Engine::new(&cfg, &d, &sd, &rv, &emb).run_epoch(&mut first, Some(3)).unwrap();
    assert_eq!(paused, EpochOutcome::Paused { claims_done: 3 });
    first.save(dir.path()).unwrap();
    drop(first);

    let mut resumed = RunState::load(dir.path()).unwrap();
    let mut engine = Engine::new(&cfg, &d, &sd, &rv, &emb);
    let mut got = Vec::new();
    while !resumed.finished(&cfg) {
        got.push(completed(engine.run_epoch(&mut resumed, None).unwrap()).timeless());
    }
    assert_eq!(got, expected);
    assert_eq!(resumed.params, straight.params);
    assert_eq!(resumed.optimizer, straight.optimizer);
}

#[test]
fn pretrain_hooks_per_backend_kind() {
    let d = synth(6, 3);
    let cfg = config();
    let (sd, rv) = (Recording::new(1), Recording::new(2));
    let (_, split) = fresh(&cfg, &d);
    let acks = pretrain_hooks(&cfg, &d, &split.seeds, &sd, &rv).unwrap();
    assert_eq!(acks.stance, Some(FineTuneAck::Skipped));
    assert_eq!(acks.veracity, Some(FineTuneAck::Skipped));
    assert_eq!(rv.fine_tunes(), vec![(Task::Veracity, FineTuneOrigin::Pretrain, split.seeds.len())]);

    let server = StubServer::start(Box::new(|_, body, _| Some((200, json!({"job": format!("{}-job", body["task"].as_str().unwrap())}).to_string()))));
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("pstance.jsonl");
    std::fs::write(
        &corpus,
        "{\"target\":\"Biden\",\"text\":\"great plan\",\"label\":\"FAVOR\"}\n{\"target\":\"Biden\",\"text\":\"awful\",\"label\":\"AGAINST\",\"reason\":\"insult\"}\n",
    )
    .unwrap();
    let mut http_cfg = cfg.clone();
    http_cfg.sd.kind = BackendKind::Http;
    http_cfg.sd.endpoint = Some(server.url());
    http_cfg.pretrain_corpus = Some(corpus);
    let http = HttpAnnotator::new(server.url(), Duration::from_secs(5), 0.1);
    let acks = pretrain_hooks(&http_cfg, &d, &split.seeds, &http, &rv).unwrap();
    assert_eq!(acks.stance, Some(FineTuneAck::Job("stance-job".into())));
    let seen = server.seen();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].body["task"], "stance");
    assert_eq!(seen[0].body["origin"], "pretrain");
    let examples = seen[0].body["examples"].as_array().unwrap();
    assert_eq!(examples.len(), 2);
    assert_eq!(examples[1]["target"], "Stance: Deny, Reason: insult");

    http_cfg.pretrain_corpus = None;
    let err = pretrain_hooks(&http_cfg, &d, &split.seeds, &http, &rv).unwrap_err();
    assert!(err.to_string().contains("pretrain_corpus"), "{err}");
}

#[test]
fn all_discard_claim_keeps_rewards_but_no_posts() {
    let d = synth(1, 12);
    let mut cfg = config();
    cfg.seed_fraction = 1.0;
    let (sd, rv, emb) = (Recording::new(1), Recording::new(2), HashedEmbedder::new(DIM));
    let (mut state, _) = fresh(&cfg, &d);
    // one unit sees +Σs, the other −Σs; both feed a large negative output weight
    let n = 3 * DIM;
    let w1 = [vec![1.0; n], vec![-1.0; n]].concat();
    state.params = PolicyParams::from_parts(n, 2, w1, vec![-1e6, -1e6]).unwrap();
    let t = Engine::new(&cfg, &d, &sd, &rv, &emb).process_claim(&d.claims[0], true, &mut state).unwrap();
    assert_eq!(t.post_steps.len(), 12);
    assert!(t.post_steps.iter().all(|s| s.action == Action::Discard && s.reward.is_some()));
    assert!(t.retained_posts.is_empty());
    let prompts = rv.prompts(Task::Veracity);
    assert_eq!(prompts.len(), 1);
    assert!(prompts[0].contains(NO_RETAINED_POSTS));
    assert!(t.claim_step.reward.is_some());
}

#[test]
fn stance_calls_capped_by_max_posts() {
    let d = synth(4, 20);
    let mut cfg = config();
    cfg.max_posts = 5;
    let (sd, rv, emb) = (Recording::new(1), Recording::new(2), HashedEmbedder::new(DIM));
    let (mut state, _) = fresh(&cfg, &d);
    let r = completed(Engine::new(&cfg, &d, &sd, &rv, &emb).run_epoch(&mut state, None).unwrap());
    assert_eq!(sd.prompts(Task::Stance).len(), 20);
    assert_eq!(r.post_steps, 20);
    assert_eq!(r.posts_annotated, 20);
}

#[test]
fn backend_outage_aborts_after_three_claims() {
    let d = synth(6, 4);
    let cfg = config();
    let mut rv = Recording::new(2);
    rv.fail_complete = true;
    let (sd, emb) = (Recording::new(1), HashedEmbedder::new(DIM));
    let (mut state, _) = fresh(&cfg, &d);
    let err = Engine::new(&cfg, &d, &sd, &rv, &emb).run_epoch(&mut state, None).unwrap_err();
    assert!(matches!(err, EngineError::Outage { aborts: 3 }));
    assert_eq!(state.progress.current.claims_aborted, 3);
    assert_eq!(state.optimizer.step, 0);
    assert!(sd.fine_tunes().is_empty());
}

#[test]
fn unreachable_fine_tune_endpoint_only_warns() {
    let d = synth(3, 4);
    let cfg = config();
    let mut sd = Recording::new(1);
    sd.fine_tune_via = Some(HttpAnnotator::new(dead_endpoint(), Duration::from_secs(2), 0.1));
    let (rv, emb) = (Recording::new(2), HashedEmbedder::new(DIM));
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("run.jsonl");
    let (mut state, _) = fresh(&cfg, &d);
    let mut engine = Engine::new(&cfg, &d, &sd, &rv, &emb).with_log(RunLog::append(&log_path).unwrap());
    let r = completed(engine.run_epoch(&mut state, None).unwrap());
    drop(engine);
    assert_eq!(r.claims_processed, 3);
    assert_eq!(r.stance_ack, None);
    assert_eq!(r.veracity_ack, Some(FineTuneAck::Skipped));
    let warned = read_log(&log_path)
        .unwrap()
        .into_iter()
        .any(|e| matches!(e, LogEvent::Warning { message, .. } if message.contains("stance fine-tune failed")));
    assert!(warned);
}
