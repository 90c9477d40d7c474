//! Sign-of-cosine rewards for labeled and unlabeled claims, and the running
//! per-veracity reference stance distributions built from seed claims.

use serde::{Deserialize, Serialize};

use crate::labels::{validate_distribution, ClassLabel, Distribution, LabelError, VeracityLabel, NUM_CLASSES, UNIFORM};
use crate::prompt::VeracityAnnotation;

/// Cosines with magnitude below this are treated as zero.
pub const ZERO_BAND: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("invalid probability vector: {0}")]
    Invalid(#[from] LabelError),
    #[error("reward value {0} outside {{-1, 0, 1}}")]
    OutOfRange(i8),
}

/// A step reward, always one of −1, 0, +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Reward {
    Negative,
    Zero,
    Positive,
}

impl Reward {
    pub fn value(self) -> f64 {
        i8::from(self) as f64
    }

    fn from_sign(x: f64) -> Self {
        if x >= ZERO_BAND {
            Reward::Positive
        } else if x <= -ZERO_BAND {
            Reward::Negative
        } else {
            Reward::Zero
        }
    }
}

impl From<Reward> for i8 {
    fn from(r: Reward) -> i8 {
        match r {
            Reward::Negative => -1,
            Reward::Zero => 0,
            Reward::Positive => 1,
        }
    }
}

impl TryFrom<i8> for Reward {
    type Error = RewardError;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(Reward::Negative),
            0 => Ok(Reward::Zero),
            1 => Ok(Reward::Positive),
            other => Err(RewardError::OutOfRange(other)),
        }
    }
}

/// How two distributions are compared before taking the sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    /// Subtract the uniform distribution first, so anti-aligned distributions
    /// score −1 and uninformative ones 0.
    #[default]
    Centered,
    /// Plain cosine of the probability vectors (never negative).
    Raw,
}

/// Returns the signed reward together with the diagnostic cosine.
pub fn sign_similarity_with(
    p: &Distribution,
    q: &Distribution,
    mode: SimilarityMode,
) -> Result<(Reward, f64), RewardError> {
    validate_distribution(p)?;
    validate_distribution(q)?;
    let shift = match mode {
        SimilarityMode::Centered => UNIFORM,
        SimilarityMode::Raw => [0.0; NUM_CLASSES],
    };
    let (mut dot, mut np, mut nq) = (0.0, 0.0, 0.0);
    for i in 0..NUM_CLASSES {
        let a = p[i] - shift[i];
        let b = q[i] - shift[i];
        dot += a * b;
        np += a * a;
        nq += b * b;
    }
    let (np, nq) = (libm::sqrt(np), libm::sqrt(nq));
    if np < ZERO_BAND || nq < ZERO_BAND {
        return Ok((Reward::Zero, 0.0));
    }
    let cosine = dot / (np * nq);
    Ok((Reward::from_sign(cosine), cosine))
}

pub fn sign_similarity(p: &Distribution, q: &Distribution) -> Result<Reward, RewardError> {
    sign_similarity_with(p, q, SimilarityMode::Centered).map(|(r, _)| r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardBranch {
    Labeled,
    Unlabeled,
    Cold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub value: Reward,
    pub branch: RewardBranch,
    pub cosine: f64,
}

impl RewardOutcome {
    pub fn cold() -> Self {
        Self { value: Reward::Zero, branch: RewardBranch::Cold, cosine: 0.0 }
    }
}

/// Reward for a seed claim: predicted veracity distribution against the
/// one-hot ground truth.
pub fn labeled_claim_reward(
    pred: &VeracityAnnotation,
    truth: VeracityLabel,
    mode: SimilarityMode,
) -> Result<RewardOutcome, RewardError> {
    let (value, cosine) = sign_similarity_with(&pred.distribution, &crate::labels::one_hot(truth.index()), mode)?;
    Ok(RewardOutcome { value, branch: RewardBranch::Labeled, cosine })
}

/// Reward for an unlabeled claim: mean stance distribution of its selected
/// posts against the reference mean of seed claims sharing the predicted
/// veracity. Cold (0) when either side is empty.
pub fn unlabeled_claim_reward(
    selected: &[Distribution],
    pred_label: VeracityLabel,
    refs: &ReferenceStanceStats,
    mode: SimilarityMode,
) -> Result<RewardOutcome, RewardError> {
    let Some(reference) = refs.mean(pred_label) else {
        return Ok(RewardOutcome::cold());
    };
    let Some(mean) = mean_distribution(selected) else {
        return Ok(RewardOutcome::cold());
    };
    let (value, cosine) = sign_similarity_with(&mean, &reference, mode)?;
    Ok(RewardOutcome { value, branch: RewardBranch::Unlabeled, cosine })
}

pub fn mean_distribution(items: &[Distribution]) -> Option<Distribution> {
    if items.is_empty() {
        return None;
    }
    let mut sum = [0.0; NUM_CLASSES];
    for d in items {
        for i in 0..NUM_CLASSES {
            sum[i] += d[i];
        }
    }
    Some(sum.map(|s| s / items.len() as f64))
}

/// Running mean stance distribution per veracity class over annotated posts
/// of seed claims.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceStanceStats {
    sums: [Distribution; NUM_CLASSES],
    counts: [u64; NUM_CLASSES],
}

impl ReferenceStanceStats {
    pub fn update(&mut self, veracity: VeracityLabel, stance_dist: &Distribution) {
        let v = veracity.index();
        for i in 0..NUM_CLASSES {
            self.sums[v][i] += stance_dist[i];
        }
        self.counts[v] += 1;
    }

    pub fn count(&self, veracity: VeracityLabel) -> u64 {
        self.counts[veracity.index()]
    }

    pub fn is_cold(&self, veracity: VeracityLabel) -> bool {
        self.count(veracity) == 0
    }

    pub fn mean(&self, veracity: VeracityLabel) -> Option<Distribution> {
        let v = veracity.index();
        let n = self.counts[v];
        (n > 0).then(|| self.sums[v].map(|s| s / n as f64))
    }
}
