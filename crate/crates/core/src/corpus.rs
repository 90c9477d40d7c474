//! Claims, their chronologically ordered conversation threads, seed splitting
//! and a seeded synthetic corpus generator whose posts carry hidden stance
//! markers that the oracle annotator can recover.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::labels::{ClassLabel, Distribution, StanceLabel, VeracityLabel, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("claim {claim}: duplicate post id `{post}`")]
    DuplicatePost { claim: String, post: String },
    #[error("duplicate claim id `{0}`")]
    DuplicateClaim(String),
    #[error("claim {claim}: post `{post}` has negative timestamp {timestamp}")]
    NegativeTimestamp { claim: String, post: String, timestamp: i64 },
    #[error("claim {claim}: post `{post}` replies to unknown id `{target}`")]
    DanglingReply { claim: String, post: String, target: String },
    #[error("claim with empty id")]
    EmptyClaimId,
    #[error("seed fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("seed fraction {0} requested but no claim carries a veracity label")]
    NoLabeledClaims(f64),
    #[error("synthetic config: {0}")]
    BadSynthConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub text: String,
    #[serde(default)]
    pub author: String,
    pub timestamp: i64,
    #[serde(default)]
    pub reply_to: Option<String>,
    /// Gold stance, only present in evaluation data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stance: Option<StanceLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub claim_id: String,
    pub text: String,
    pub veracity: Option<VeracityLabel>,
    #[serde(default)]
    pub posts: Vec<Post>,
}

impl Claim {
    /// Sorts posts by timestamp (stable, so equal timestamps keep file order)
    /// and checks per-thread invariants.
    pub fn normalize(&mut self) -> Result<(), CorpusError> {
        if self.claim_id.is_empty() {
            return Err(CorpusError::EmptyClaimId);
        }
        self.posts.sort_by_key(|p| p.timestamp);
        let mut ids = BTreeSet::new();
        for post in &self.posts {
            if post.timestamp < 0 {
                return Err(CorpusError::NegativeTimestamp {
                    claim: self.claim_id.clone(),
                    post: post.post_id.clone(),
                    timestamp: post.timestamp,
                });
            }
            if !ids.insert(post.post_id.as_str()) {
                return Err(CorpusError::DuplicatePost {
                    claim: self.claim_id.clone(),
                    post: post.post_id.clone(),
                });
            }
        }
        for post in &self.posts {
            if let Some(target) = &post.reply_to {
                if *target != self.claim_id && !ids.contains(target.as_str()) {
                    return Err(CorpusError::DanglingReply {
                        claim: self.claim_id.clone(),
                        post: post.post_id.clone(),
                        target: target.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub claims: Vec<Claim>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DatasetStats {
    pub total_claims: usize,
    pub total_posts: usize,
    pub avg_posts_per_claim: f64,
    pub max_posts_per_claim: usize,
    pub min_posts_per_claim: usize,
    /// Claim counts per veracity class, canonical order; unlabeled claims excluded.
    pub veracity_counts: [usize; NUM_CLASSES],
    pub unlabeled_claims: usize,
    /// Post counts per gold stance, canonical order.
    pub stance_counts: [usize; NUM_CLASSES],
}

impl Dataset {
    /// Builds a dataset, sorting every thread chronologically and enforcing
    /// id uniqueness.
    pub fn new(name: impl Into<String>, mut claims: Vec<Claim>) -> Result<Self, CorpusError> {
        let mut ids = BTreeSet::new();
        for claim in &mut claims {
            claim.normalize()?;
            if !ids.insert(claim.claim_id.clone()) {
                return Err(CorpusError::DuplicateClaim(claim.claim_id.clone()));
            }
        }
        Ok(Self { name: name.into(), claims })
    }

    pub fn claim(&self, claim_id: &str) -> Option<&Claim> {
        self.claims.iter().find(|c| c.claim_id == claim_id)
    }

    pub fn index_of(&self, claim_id: &str) -> Option<usize> {
        self.claims.iter().position(|c| c.claim_id == claim_id)
    }

    pub fn stats(&self) -> DatasetStats {
        let mut stats = DatasetStats {
            total_claims: self.claims.len(),
            ..DatasetStats::default()
        };
        let mut min = usize::MAX;
        for claim in &self.claims {
            let n = claim.posts.len();
            stats.total_posts += n;
            stats.max_posts_per_claim = stats.max_posts_per_claim.max(n);
            min = min.min(n);
            match claim.veracity {
                Some(v) => stats.veracity_counts[v.index()] += 1,
                None => stats.unlabeled_claims += 1,
            }
            for post in &claim.posts {
                if let Some(s) = post.stance {
                    stats.stance_counts[s.index()] += 1;
                }
            }
        }
        stats.min_posts_per_claim = if self.claims.is_empty() { 0 } else { min };
        if !self.claims.is_empty() {
            stats.avg_posts_per_claim = stats.total_posts as f64 / self.claims.len() as f64;
        }
        stats
    }

    /// Copy with veracity labels removed from every claim outside `keep`.
    pub fn masked(&self, keep: &BTreeSet<String>) -> Dataset {
        let mut out = self.clone();
        for claim in &mut out.claims {
            if !keep.contains(&claim.claim_id) {
                claim.veracity = None;
            }
        }
        out
    }
}

/// Result of [`split_seeds`]: `seeds` and `pool` partition the dataset's claim ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSplit {
    pub seeds: BTreeSet<String>,
    pub pool: BTreeSet<String>,
}

/// Draws `round(fraction * #labeled)` seed claims from the labeled claims.
/// Every other claim, labeled or not, goes to the pool and is treated as
/// unlabeled during training.
pub fn split_seeds(dataset: &Dataset, fraction: f64, rng_seed: u64) -> Result<SeedSplit, CorpusError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(CorpusError::BadFraction(fraction));
    }
    let mut labeled: Vec<&str> = dataset
        .claims
        .iter()
        .filter(|c| c.veracity.is_some())
        .map(|c| c.claim_id.as_str())
        .collect();
    if fraction > 0.0 && labeled.is_empty() {
        return Err(CorpusError::NoLabeledClaims(fraction));
    }
    let k = libm::round(fraction * labeled.len() as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    labeled.shuffle(&mut rng);
    let seeds: BTreeSet<String> = labeled[..k].iter().map(|s| String::from(*s)).collect();
    let pool = dataset
        .claims
        .iter()
        .filter(|c| !seeds.contains(&c.claim_id))
        .map(|c| c.claim_id.clone())
        .collect();
    Ok(SeedSplit { seeds, pool })
}

// ---------------------------------------------------------------------------
// Synthetic corpus

const STANCE_MARKER_PREFIX: &str = "[stance=";
const VERACITY_MARKER_PREFIX: &str = "[veracity=";
const NOISE_CODE: &str = "none";

/// What a synthetic post's hidden marker says.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StanceMarker {
    Signal(StanceLabel),
    Noise,
}

pub fn stance_marker_text(marker: StanceMarker) -> String {
    match marker {
        StanceMarker::Signal(l) => format!("{STANCE_MARKER_PREFIX}{}]", l.code()),
        StanceMarker::Noise => format!("{STANCE_MARKER_PREFIX}{NOISE_CODE}]"),
    }
}

pub fn veracity_marker_text(label: VeracityLabel) -> String {
    format!("{VERACITY_MARKER_PREFIX}{}]", label.code())
}

fn marker_value<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    // last occurrence wins so that quoted markers earlier in a prompt cannot shadow it
    let start = text.rfind(prefix)? + prefix.len();
    let len = text[start..].find(']')?;
    Some(&text[start..start + len])
}

/// Recovers the hidden stance marker from a post text (or a prompt embedding it).
pub fn find_stance_marker(text: &str) -> Option<StanceMarker> {
    let value = marker_value(text, STANCE_MARKER_PREFIX)?;
    if value == NOISE_CODE {
        return Some(StanceMarker::Noise);
    }
    StanceLabel::ALL.into_iter().find(|l| l.code() == value).map(StanceMarker::Signal)
}

pub fn find_veracity_marker(text: &str) -> Option<VeracityLabel> {
    let value = marker_value(text, VERACITY_MARKER_PREFIX)?;
    VeracityLabel::ALL.into_iter().find(|l| l.code() == value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_claims: usize,
    pub posts_per_claim: usize,
    /// Prior over N, T, F, U.
    pub veracity_prior: Distribution,
    /// Row `v` is the stance distribution (S, D, Q, C) of posts under veracity `v`.
    pub stance_given_veracity: [Distribution; NUM_CLASSES],
    pub noise_post_fraction: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_claims: 200,
            posts_per_claim: 20,
            veracity_prior: [0.25; NUM_CLASSES],
            stance_given_veracity: [
                [0.15, 0.05, 0.10, 0.70],
                [0.65, 0.05, 0.10, 0.20],
                [0.10, 0.60, 0.15, 0.15],
                [0.10, 0.10, 0.60, 0.20],
            ],
            noise_post_fraction: 0.3,
            rng_seed: 42,
        }
    }
}

fn check_stochastic(name: &str, row: &Distribution) -> Result<(), CorpusError> {
    crate::labels::validate_distribution(row)
        .map_err(|e| CorpusError::BadSynthConfig(format!("{name}: {e}")))
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        check_stochastic("veracity_prior", &self.veracity_prior)?;
        for (v, row) in self.stance_given_veracity.iter().enumerate() {
            check_stochastic(&format!("stance_given_veracity[{v}]"), row)?;
        }
        if !(0.0..=1.0).contains(&self.noise_post_fraction) {
            return Err(CorpusError::BadSynthConfig(format!(
                "noise_post_fraction {} outside [0, 1]",
                self.noise_post_fraction
            )));
        }
        Ok(())
    }

    /// Most likely stance under each veracity class (ties to canonical order).
    pub fn modal_stances(&self) -> [StanceLabel; NUM_CLASSES] {
        self.stance_given_veracity
            .map(|row| StanceLabel::ALL[crate::labels::argmax(&row)])
    }
}

fn draw_categorical<R: Rng + ?Sized>(rng: &mut R, dist: &Distribution) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding slack: fall back to the last class with mass
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(NUM_CLASSES - 1)
}

/// Generates a fully labeled synthetic corpus. Post texts embed a hidden
/// stance marker (or a noise marker) and claim texts a veracity marker; the
/// gold stance of signal posts is also stored in [`Post::stance`].
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset, CorpusError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut claims = Vec::with_capacity(cfg.n_claims);
    for i in 0..cfg.n_claims {
        let veracity = VeracityLabel::ALL[draw_categorical(&mut rng, &cfg.veracity_prior)];
        let claim_id = format!("c{i:05}");
        let topic: u32 = rng.random_range(0..1000);
        let text = format!(
            "claim {i} reports event {topic} {}",
            veracity_marker_text(veracity)
        );
        let mut timestamp = i as i64 * 1_000_000;
        let mut posts: Vec<Post> = Vec::with_capacity(cfg.posts_per_claim);
        for j in 0..cfg.posts_per_claim {
            timestamp += rng.random_range(1..600);
            let noise = rng.random::<f64>() < cfg.noise_post_fraction;
            let (marker, stance) = if noise {
                (StanceMarker::Noise, None)
            } else {
                let s = StanceLabel::ALL[draw_categorical(&mut rng, &cfg.stance_given_veracity[veracity.index()])];
                (StanceMarker::Signal(s), Some(s))
            };
            let author = format!("user{}", rng.random_range(0..500u32));
            let reply_to = if j == 0 || rng.random::<f64>() < 0.5 {
                claim_id.clone()
            } else {
                posts[rng.random_range(0..j)].post_id.clone()
            };
            posts.push(Post {
                post_id: format!("{claim_id}-p{j:03}"),
                text: format!("reply {j} to claim {i} {}", stance_marker_text(marker)),
                author,
                timestamp,
                reply_to: Some(reply_to),
                stance,
            });
        }
        claims.push(Claim { claim_id, text, veracity: Some(veracity), posts });
    }
    Dataset::new(format!("synthetic-{}", cfg.rng_seed), claims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn post(id: &str, ts: i64) -> Post {
        Post {
            post_id: id.into(),
            text: "t".into(),
            author: "a".into(),
            timestamp: ts,
            reply_to: None,
            stance: None,
        }
    }

    fn claim(id: &str, v: Option<VeracityLabel>, posts: Vec<Post>) -> Claim {
        Claim { claim_id: id.into(), text: "x".into(), veracity: v, posts }
    }

    #[test]
    fn posts_sorted_against_explicit_sort() {
        let stamps = [50, 3, 9, 3, 0, 17];
        let posts: Vec<Post> = stamps.iter().enumerate().map(|(i, &t)| post(&format!("p{i}"), t)).collect();
        let d = Dataset::new("d", vec![claim("c", None, posts.clone())]).unwrap();
        // oracle: insertion sort keeping file order on ties
        let mut expected: Vec<Post> = Vec::new();
        for p in posts {
            let at = expected.iter().position(|q| q.timestamp > p.timestamp).unwrap_or(expected.len());
            expected.insert(at, p);
        }
        assert_eq!(d.claims[0].posts, expected);
    }

    #[test]
    fn rejects_duplicates_and_bad_replies() {
        let dup = Dataset::new("d", vec![claim("c", None, vec![post("p", 1), post("p", 2)])]);
        assert!(matches!(dup, Err(CorpusError::DuplicatePost { .. })));
        let dupc = Dataset::new("d", vec![claim("c", None, vec![]), claim("c", None, vec![])]);
        assert!(matches!(dupc, Err(CorpusError::DuplicateClaim(_))));
        let mut p = post("p", 1);
        p.reply_to = Some("ghost".into());
        assert!(matches!(
            Dataset::new("d", vec![claim("c", None, vec![p])]),
            Err(CorpusError::DanglingReply { .. })
        ));
        let mut ok = post("p2", 1);
        ok.reply_to = Some("c".into());
        assert!(Dataset::new("d", vec![claim("c", None, vec![ok])]).is_ok());
        assert!(matches!(
            Dataset::new("d", vec![claim("c", None, vec![post("p", -1)])]),
            Err(CorpusError::NegativeTimestamp { .. })
        ));
    }

    fn labeled(n: usize) -> Dataset {
        let claims = (0..n)
            .map(|i| claim(&format!("c{i}"), if i % 3 == 2 { None } else { Some(VeracityLabel::True) }, vec![]))
            .collect();
        Dataset::new("d", claims).unwrap()
    }

    #[test]
    fn split_sizes_and_partition() {
        let claims = (0..100).map(|i| claim(&format!("c{i}"), Some(VeracityLabel::False), vec![])).collect();
        let d = Dataset::new("d", claims).unwrap();
        let s = split_seeds(&d, 0.5, 7).unwrap();
        assert_eq!(s.seeds.len(), 50);
        assert_eq!(s.pool.len(), 50);
        assert!(s.seeds.is_disjoint(&s.pool));

        let d = labeled(30);
        let s = split_seeds(&d, 0.5, 1).unwrap();
        assert_eq!(s.seeds.len(), 10);
        for id in &s.seeds {
            assert!(d.claim(id).unwrap().veracity.is_some());
        }
        assert_eq!(s.seeds.len() + s.pool.len(), 30);
        assert_eq!(split_seeds(&d, 0.5, 1).unwrap(), s);
        assert!(split_seeds(&d, 0.0, 1).unwrap().seeds.is_empty());
    }

    #[test]
    fn split_errors() {
        let d = Dataset::new("d", vec![claim("c", None, vec![])]).unwrap();
        assert!(matches!(split_seeds(&d, 0.5, 0), Err(CorpusError::NoLabeledClaims(_))));
        assert!(split_seeds(&d, 0.0, 0).is_ok());
        assert!(matches!(split_seeds(&d, 1.5, 0), Err(CorpusError::BadFraction(_))));
    }

    #[test]
    fn masking_keeps_only_seed_labels() {
        let d = labeled(6);
        let s = split_seeds(&d, 0.5, 3).unwrap();
        let m = d.masked(&s.seeds);
        for c in &m.claims {
            assert_eq!(c.veracity.is_some(), s.seeds.contains(&c.claim_id));
        }
    }

    #[test]
    fn synthetic_shape_and_determinism() {
        let cfg = SynthConfig { n_claims: 10, posts_per_claim: 20, ..SynthConfig::default() };
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.claims.len(), 10);
        assert_eq!(a.stats().total_posts, 200);
        assert_eq!(a, generate_synthetic(&cfg).unwrap());
        for c in &a.claims {
            assert_eq!(find_veracity_marker(&c.text), c.veracity);
            for p in &c.posts {
                let m = find_stance_marker(&p.text).unwrap();
                match m {
                    StanceMarker::Signal(s) => assert_eq!(p.stance, Some(s)),
                    StanceMarker::Noise => assert_eq!(p.stance, None),
                }
            }
        }
    }

    #[test]
    fn synthetic_rejects_non_stochastic() {
        let mut cfg = SynthConfig::default();
        cfg.stance_given_veracity[2] = [0.5, 0.5, 0.5, 0.0];
        assert!(matches!(generate_synthetic(&cfg), Err(CorpusError::BadSynthConfig(_))));
        let mut cfg = SynthConfig::default();
        cfg.veracity_prior = [0.2; 4];
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn synthetic_stance_frequency_matches_conditional() {
        let mut cfg = SynthConfig {
            n_claims: 500,
            posts_per_claim: 20,
            veracity_prior: [0.0, 1.0, 0.0, 0.0],
            noise_post_fraction: 0.0,
            rng_seed: 9,
            ..SynthConfig::default()
        };
        cfg.stance_given_veracity[1] = [0.7, 0.1, 0.1, 0.1];
        let d = generate_synthetic(&cfg).unwrap();
        let (mut support, mut total) = (0usize, 0usize);
        for c in &d.claims {
            assert_eq!(c.veracity, Some(VeracityLabel::True));
            for p in &c.posts {
                total += 1;
                support += usize::from(p.stance == Some(StanceLabel::Support));
            }
        }
        assert_eq!(total, 10_000);
        let freq = support as f64 / total as f64;
        assert!((freq - 0.7).abs() <= 0.02, "S frequency {freq}");
    }

    #[test]
    fn markers_survive_surrounding_text() {
        let t = format!("quoted {} then {}", stance_marker_text(StanceMarker::Noise), stance_marker_text(StanceMarker::Signal(StanceLabel::Deny)));
        assert_eq!(find_stance_marker(&t), Some(StanceMarker::Signal(StanceLabel::Deny)));
        assert_eq!(find_stance_marker("nothing here"), None);
    }
}
