//! Evaluation over a labeled test set: stance and veracity F1, optionally
//! with the selector filtering which posts reach the veracity annotator.

use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rumorsel_core::annotate::{annotate_claim, Annotator};
use rumorsel_core::corpus::Dataset;
use rumorsel_core::labels::{StanceLabel, VeracityLabel};
use rumorsel_core::metrics::{ConfusionMatrix, MetricsError, MetricsReport};
use rumorsel_core::policy::{sample_action, Action, Level, PolicyParams};
use rumorsel_core::prompt::StanceAnnotation;
use rumorsel_core::state::{build_state, post_instance_text, ContextAccumulator, Embedder};

use crate::engine::{annotate_posts_ordered, request_key, EngineError};

/// Sentinel epoch for evaluation request keys.
pub const EVAL_EPOCH: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Retain with probability `p_retain`, as during training.
    #[default]
    Sample,
    /// Retain iff `p_retain > 0.5`.
    Greedy,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions<'p> {
    pub policy: Option<&'p PolicyParams>,
    pub mode: PolicyMode,
    /// Score stance only on posts the policy retained.
    pub stance_on_retained: bool,
    pub max_in_flight: usize,
    pub rng_seed: u64,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        Self { policy: None, mode: PolicyMode::Sample, stance_on_retained: false, max_in_flight: 4, rng_seed: 0 }
    }
}

/// Retain counts split by whether the post carries a gold stance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RetainStats {
    pub informative_total: u64,
    pub informative_retained: u64,
    pub noise_total: u64,
    pub noise_retained: u64,
}

impl RetainStats {
    pub fn informative_rate(&self) -> f64 {
        ratio(self.informative_retained, self.informative_total)
    }

    pub fn noise_rate(&self) -> f64 {
        ratio(self.noise_retained, self.noise_total)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// `None` when no evaluated post carries a gold stance.
    pub stance: Option<MetricsReport>,
    pub veracity: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retain: Option<RetainStats>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub fn evaluate(
    dataset: &Dataset,
    sd: &dyn Annotator,
    rv: &dyn Annotator,
    embedder: &dyn Embedder,
    opts: &EvalOptions<'_>,
) -> Result<EvaluationReport, EvalError> {
    if dataset.claims.is_empty() {
        return Err(MetricsError::EmptyEvaluation.into());
    }
    let mut stance_cm = ConfusionMatrix::default();
    let mut veracity_cm = ConfusionMatrix::default();
    let mut stance_errors = 0;
    let mut veracity_errors = 0;
    let mut retain = RetainStats::default();

    for claim in &dataset.claims {
        let cid = claim.claim_id.as_str();
        let order: Vec<usize> = (0..claim.posts.len()).collect();
        let keys: Vec<u64> = order.iter().map(|&i| request_key(opts.rng_seed, EVAL_EPOCH, cid, Some(i), "stance")).collect();
        let annotations = annotate_posts_ordered(sd, claim, &order, &keys, opts.max_in_flight);

        let mut rng = ChaCha8Rng::seed_from_u64(request_key(opts.rng_seed, EVAL_EPOCH, cid, None, "actions"));
        let claim_vec = match opts.policy {
            Some(_) => Some(embedder.embed(&claim.text).map_err(EngineError::from)?.values),
            None => None,
        };
        let mut ctx = ContextAccumulator::new(embedder.dim());
        let mut kept: Vec<(usize, StanceAnnotation)> = Vec::new();
        for (i, ann) in annotations.into_iter().enumerate() {
            let post = &claim.posts[i];
            let ann = match ann {
                Ok(a) => a,
                Err(e) => {
                    log::warn!("evaluation: claim {cid} post {}: {e}", post.post_id);
                    stance_errors += 1;
                    continue;
                }
            };
            let keep = match (opts.policy, &claim_vec) {
                (Some(params), Some(cv)) => {
                    let inst = embedder.embed(&post_instance_text(post, &ann)).map_err(EngineError::from)?.values;
                    let s = build_state(cv, &ctx, &inst).map_err(EngineError::from)?;
                    let step = sample_action(params, s, Level::Post, &mut rng).map_err(EngineError::from)?;
                    let keep = match opts.mode {
                        PolicyMode::Sample => step.action == Action::Retain,
                        PolicyMode::Greedy => step.p_retain > 0.5,
                    };
                    if keep {
                        ctx.update(&inst).map_err(EngineError::from)?;
                    }
                    let informative = post.stance.is_some();
                    let (total, kept_n) = if informative {
                        (&mut retain.informative_total, &mut retain.informative_retained)
                    } else {
                        (&mut retain.noise_total, &mut retain.noise_retained)
                    };
                    *total += 1;
                    *kept_n += u64::from(keep);
                    keep
                }
                _ => true,
            };
            if let Some(gold) = post.stance {
                if keep || !opts.stance_on_retained {
                    stance_cm.add::<StanceLabel>(gold, ann.label);
                }
            }
            if keep {
                kept.push((i, ann));
            }
        }
        let Some(gold) = claim.veracity else { continue };
        let key = request_key(opts.rng_seed, EVAL_EPOCH, cid, None, "veracity");
        match annotate_claim(rv, claim, kept.iter().map(|(i, a)| (&claim.posts[*i], a)), key) {
            Ok(pred) => veracity_cm.add::<VeracityLabel>(gold, pred.label),
            Err(e) => {
                log::warn!("evaluation: claim {cid}: {e}");
                veracity_errors += 1;
            }
        }
    }

    let stance = if stance_cm.total() == 0 && stance_errors == 0 {
        None
    } else {
        Some(MetricsReport::from_confusion::<StanceLabel>("stance", &stance_cm, stance_errors)?)
    };
    let veracity = MetricsReport::from_confusion::<VeracityLabel>("veracity", &veracity_cm, veracity_errors)?;
    Ok(EvaluationReport { stance, veracity, retain: opts.policy.map(|_| retain) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rumorsel_core::corpus::{generate_synthetic, SynthConfig};
    use rumorsel_core::oracle::{OracleAnnotator, OracleConfig};
    use rumorsel_core::state::HashedEmbedder;

    fn oracle(accuracy: f64) -> OracleAnnotator {
        OracleAnnotator::new(OracleConfig { accuracy, seed: 5, ..OracleConfig::default() })
    }

    #[test]
    fn perfect_oracle_scores_one() {
        // every post carries the modal stance of its claim's veracity
        let cfg = SynthConfig {
            n_claims: 20,
            posts_per_claim: 10,
            noise_post_fraction: 0.0,
            stance_given_veracity: [
                [0.0, 0.0, 0.0, 1.0],
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
            ..SynthConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        let o = oracle(1.0);
        let r = evaluate(&data, &o, &o, &HashedEmbedder::new(16), &EvalOptions::default()).unwrap();
        assert_eq!(r.stance.unwrap().micro_f1, 1.0);
        assert_eq!(r.veracity.micro_f1, 1.0);
        assert!(r.retain.is_none());
    }

    #[test]
    fn oracle_stance_accuracy() {
        let cfg = SynthConfig { n_claims: 50, posts_per_claim: 20, noise_post_fraction: 0.0, ..SynthConfig::default() };
        let data = generate_synthetic(&cfg).unwrap();
        let o = oracle(0.9);
        let r = evaluate(&data, &o, &o, &HashedEmbedder::new(16), &EvalOptions::default()).unwrap();
        let s = r.stance.unwrap();
        assert_eq!(s.n, 1000);
        assert!((s.micro_f1 - 0.9).abs() <= 0.03, "{}", s.micro_f1);
    }

    #[test]
    fn empty_set_is_an_error() {
        let data = Dataset::new("empty", vec![]).unwrap();
        let o = oracle(0.9);
        let err = evaluate(&data, &o, &o, &HashedEmbedder::new(16), &EvalOptions::default()).unwrap_err();
        assert!(matches!(err, EvalError::Metrics(MetricsError::EmptyEvaluation)));
    }

    #[test]
    fn policy_filter_reports_retain_rates() {
        let data = generate_synthetic(&SynthConfig { n_claims: 10, ..SynthConfig::default() }).unwrap();
        let o = oracle(0.9);
        let params = PolicyParams::zeros(48, 4);
        let opts = EvalOptions { policy: Some(&params), mode: PolicyMode::Greedy, ..EvalOptions::default() };
        let r = evaluate(&data, &o, &o, &HashedEmbedder::new(16), &opts).unwrap();
        let stats = r.retain.unwrap();
        assert_eq!(stats.informative_total + stats.noise_total, 200);
        assert_eq!(stats.informative_retained + stats.noise_retained, 0);
    }
}
