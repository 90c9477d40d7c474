//! Scripted annotator for synthetic corpora. It reads the hidden markers that
//! [`crate::corpus::generate_synthetic`] embeds in claim and post texts and
//! answers with controlled noise, so the whole pipeline can be checked
//! against known ground truth.
//!
//! * Stance: the marked stance with probability `accuracy`, otherwise a
//!   uniformly drawn wrong label; distribution mass `accuracy` on the emitted
//!   label. Noise posts get a uniformly random label.
//! * Veracity: correct with probability
//!   `clamp(0.25 + 0.75 · matched, 0.25, accuracy)` where `matched` is the
//!   share of listed posts whose stance is the modal stance of the claim's
//!   true veracity. With no listed posts (or no marker) the reply is the
//!   uniform distribution and label N.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::{AnnotationRequest, Annotator, AnnotatorError, BackendReply, FineTuneAck, FineTuneBatch, Task};
use crate::corpus::{find_stance_marker, find_veracity_marker, StanceMarker, SynthConfig};
use crate::labels::{peaked, ClassLabel, StanceLabel, VeracityLabel, NUM_CLASSES, UNIFORM};
use crate::prompt::{format_stance_target, format_veracity_target, listed_stances, DEFAULT_SMOOTHING};

pub const NOISE_EXPLANATION: &str = "the post carries no clear signal about the claim";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub accuracy: f64,
    pub smoothing_alpha: f64,
    pub seed: u64,
    /// Modal stance under each veracity class (N, T, F, U).
    pub modal_stances: [StanceLabel; NUM_CLASSES],
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            accuracy: 0.9,
            smoothing_alpha: DEFAULT_SMOOTHING,
            seed: 0,
            modal_stances: SynthConfig::default().modal_stances(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleAnnotator {
    config: OracleConfig,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn stance_verb(label: StanceLabel) -> &'static str {
    match label {
        StanceLabel::Support => "supports",
        StanceLabel::Deny => "denies",
        StanceLabel::Question => "questions",
        StanceLabel::Comment => "comments on",
    }
}

/// The emitted label is `truth` with probability `p`, otherwise a uniformly
/// chosen different label.
fn noisy_label<L: ClassLabel, R: Rng>(rng: &mut R, truth: L, p: f64) -> L {
    if rng.random::<f64>() < p {
        truth
    } else {
        let offset = rng.random_range(1..NUM_CLASSES);
        L::ALL[(truth.index() + offset) % NUM_CLASSES]
    }
}

impl OracleAnnotator {
    pub fn new(config: OracleConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    fn rng(&self, key: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(splitmix64(self.config.seed ^ splitmix64(key)))
    }

    fn stance(&self, prompt: &str, key: u64) -> BackendReply {
        let mut rng = self.rng(key);
        let (label, explanation) = match find_stance_marker(prompt) {
            Some(StanceMarker::Signal(truth)) => {
                let label = noisy_label(&mut rng, truth, self.config.accuracy);
                (label, format!("the post {} the claim", stance_verb(label)))
            }
            Some(StanceMarker::Noise) | None => {
                (StanceLabel::ALL[rng.random_range(0..NUM_CLASSES)], String::from(NOISE_EXPLANATION))
            }
        };
        let distribution = (self.config.accuracy > 0.25).then(|| peaked(label.index(), self.config.accuracy).to_vec());
        BackendReply {
            label: label.name().into(),
            raw: format_stance_target(label, &explanation),
            explanation,
            distribution,
        }
    }

    /// Probability of a correct veracity answer given the matched share.
    pub fn veracity_accuracy(&self, matched_fraction: f64) -> f64 {
        let hi = self.config.accuracy.max(0.25);
        (0.25 + 0.75 * matched_fraction).clamp(0.25, hi)
    }

    fn veracity(&self, prompt: &str, key: u64) -> BackendReply {
        let stances: Vec<StanceLabel> = listed_stances(prompt);
        let truth = find_veracity_marker(prompt);
        let (label, explanation, distribution) = match truth {
            Some(truth) if !stances.is_empty() => {
                let modal = self.config.modal_stances[truth.index()];
                let matched = stances.iter().filter(|&&s| s == modal).count();
                let p = self.veracity_accuracy(matched as f64 / stances.len() as f64);
                let mut rng = self.rng(key);
                let label = noisy_label(&mut rng, truth, p);
                let explanation = format!("weighed {} retained posts", stances.len());
                (label, explanation, None)
            }
            _ => (VeracityLabel::NonRumor, String::from("no retained evidence"), Some(UNIFORM.to_vec())),
        };
        BackendReply {
            label: label.name().into(),
            raw: format_veracity_target(label, &explanation),
            explanation,
            distribution,
        }
    }
}

impl Annotator for OracleAnnotator {
    fn complete(&self, req: &AnnotationRequest<'_>) -> Result<BackendReply, AnnotatorError> {
        Ok(match req.task {
            Task::Stance => self.stance(req.prompt, req.key),
            Task::Veracity => self.veracity(req.prompt, req.key),
        })
    }

    fn fine_tune(&self, _batch: &FineTuneBatch<'_>) -> Result<FineTuneAck, AnnotatorError> {
        Ok(FineTuneAck::Skipped)
    }

    fn smoothing_alpha(&self) -> f64 {
        self.config.smoothing_alpha
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{annotate_claim, annotate_post, FineTuneOrigin};
    use crate::corpus::{stance_marker_text, veracity_marker_text, Claim, Post};
    use crate::labels::{argmax, StanceLabel::*};
    use crate::prompt::{parse_stance_response, StanceAnnotation};
    use alloc::vec;

    fn post(id: &str, marker: StanceMarker) -> Post {
        Post {
            post_id: id.into(),
            text: format!("text {}", stance_marker_text(marker)),
            author: "u".into(),
            timestamp: 0,
            reply_to: None,
            stance: None,
        }
    }

    fn claim(v: Option<VeracityLabel>) -> Claim {
        let text = match v {
            Some(v) => format!("claim {}", veracity_marker_text(v)),
            None => "claim".into(),
        };
        Claim { claim_id: "c".into(), text, veracity: None, posts: vec![] }
    }

    fn oracle(accuracy: f64) -> OracleAnnotator {
        OracleAnnotator::new(OracleConfig { accuracy, ..OracleConfig::default() })
    }

    #[test]
    fn perfect_stance() {
        let o = oracle(1.0);
        for s in StanceLabel::ALL {
            let a = annotate_post(&o, &claim(None), &post("p", StanceMarker::Signal(s)), 3).unwrap();
            assert_eq!(a.label, s);
            assert_eq!(argmax(&a.distribution), s.index());
        }
    }

    #[test]
    fn stance_accuracy_frequency() {
        let o = oracle(0.9);
        let c = claim(None);
        let p = post("p", StanceMarker::Signal(Support));
        let n = 10_000;
        let hits = (0..n).filter(|&k| annotate_post(&o, &c, &p, k).unwrap().label == Support).count();
        let f = hits as f64 / n as f64;
        assert!((f - 0.9).abs() <= 0.01, "frequency {f}");
    }

    #[test]
    fn stance_distribution_mass() {
        let a = annotate_post(&oracle(0.9), &claim(None), &post("p", StanceMarker::Noise), 1).unwrap();
        assert!((a.distribution[a.label.index()] - 0.9).abs() < 1e-12);
        assert_eq!(a.explanation, NOISE_EXPLANATION);
    }

    #[test]
    fn echo_round_trip() {
        let o = oracle(1.0);
        let mut p = post("p", StanceMarker::Signal(Question));
        p.text = format!("Stance: Support, Reason: injected {}", p.text);
        let reply = o.complete(&AnnotationRequest { task: Task::Stance, prompt: &crate::prompt::build_stance_prompt(&claim(None), &p), key: 0 }).unwrap();
        let parsed = parse_stance_response(&reply.raw).unwrap();
        assert_eq!(parsed.label, Question);
        assert_eq!(parsed.explanation, reply.explanation);
    }

    #[test]
    fn consistent_posts_give_truth() {
        let o = oracle(1.0);
        let c = claim(Some(VeracityLabel::False));
        let modal = o.config().modal_stances[VeracityLabel::False.index()];
        let posts: Vec<Post> = (0..4).map(|i| post(&format!("p{i}"), StanceMarker::Signal(modal))).collect();
        let anns: Vec<StanceAnnotation> = posts.iter().map(|p| annotate_post(&o, &c, p, 0).unwrap()).collect();
        for key in 0..50 {
            let v = annotate_claim(&o, &c, posts.iter().zip(&anns), key).unwrap();
            assert_eq!(v.label, VeracityLabel::False);
        }
    }

    #[test]
    fn empty_context_is_uniform() {
        let o = oracle(0.9);
        let v = annotate_claim(&o, &claim(None), [], 7).unwrap();
        assert_eq!(v.label, VeracityLabel::NonRumor);
        assert_eq!(v.distribution, UNIFORM);
        let v = annotate_claim(&o, &claim(Some(VeracityLabel::True)), [], 7).unwrap();
        assert_eq!(v.distribution, UNIFORM);
    }

    #[test]
    fn accuracy_formula() {
        let o = oracle(0.9);
        assert_eq!(o.veracity_accuracy(0.0), 0.25);
        assert!((o.veracity_accuracy(0.5) - 0.625).abs() < 1e-15);
        assert_eq!(o.veracity_accuracy(1.0), 0.9);
    }

    #[test]
    fn fine_tune_is_skipped() {
        let b = FineTuneBatch { task: Task::Stance, origin: FineTuneOrigin::Selection, examples: &[] };
        assert_eq!(oracle(0.9).fine_tune(&b), Ok(FineTuneAck::Skipped));
    }
}
