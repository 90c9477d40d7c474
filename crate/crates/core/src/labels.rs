//! Stance (S, D, Q, C) and veracity (N, T, F, U) label sets and the 4-class
//! probability vectors built over them.

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of classes in both label sets.
pub const NUM_CLASSES: usize = 4;

/// Tolerance used when checking that a distribution sums to one.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LabelError {
    #[error("unknown label `{0}`")]
    Unknown(alloc::string::String),
    #[error("distribution entry {index} is invalid ({value})")]
    BadEntry { index: usize, value: f64 },
    #[error("distribution sums to {0}, expected 1")]
    NotNormalized(f64),
}

/// Post-level stance towards a claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StanceLabel {
    #[serde(rename = "S")]
    Support,
    #[serde(rename = "D")]
    Deny,
    #[serde(rename = "Q")]
    Question,
    #[serde(rename = "C")]
    Comment,
}

/// Claim-level veracity class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VeracityLabel {
    #[serde(rename = "N")]
    NonRumor,
    #[serde(rename = "T")]
    True,
    #[serde(rename = "F")]
    False,
    #[serde(rename = "U")]
    Unverified,
}

/// Shared behaviour of the two fixed-order 4-class label sets.
pub trait ClassLabel: Copy + Eq + fmt::Debug + 'static {
    /// All labels in canonical order; index `i` is distribution slot `i`.
    const ALL: [Self; NUM_CLASSES];

    fn index(self) -> usize;

    fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Single-letter code used in data files.
    fn code(self) -> &'static str;

    /// Human-readable name as used in prompts and responses.
    fn name(self) -> &'static str;

    /// Lenient token match used by the response parsers.
    fn from_token(token: &str) -> Option<Self>;
}

impl ClassLabel for StanceLabel {
    const ALL: [Self; NUM_CLASSES] = [
        StanceLabel::Support,
        StanceLabel::Deny,
        StanceLabel::Question,
        StanceLabel::Comment,
    ];

    fn index(self) -> usize {
        self as usize
    }

    fn code(self) -> &'static str {
        match self {
            StanceLabel::Support => "S",
            StanceLabel::Deny => "D",
            StanceLabel::Question => "Q",
            StanceLabel::Comment => "C",
        }
    }

    fn name(self) -> &'static str {
        match self {
            StanceLabel::Support => "Support",
            StanceLabel::Deny => "Deny",
            StanceLabel::Question => "Question",
            StanceLabel::Comment => "Comment",
        }
    }

    fn from_token(token: &str) -> Option<Self> {
        let norm = normalize_token(token);
        let label = match norm.as_str() {
            "s" | "support" | "supports" | "supporting" => StanceLabel::Support,
            "d" | "deny" | "denies" | "denying" => StanceLabel::Deny,
            "q" | "question" | "questions" | "questioning" | "query" => StanceLabel::Question,
            "c" | "comment" | "comments" | "commenting" => StanceLabel::Comment,
            _ => return None,
        };
        Some(label)
    }
}

impl ClassLabel for VeracityLabel {
    const ALL: [Self; NUM_CLASSES] = [
        VeracityLabel::NonRumor,
        VeracityLabel::True,
        VeracityLabel::False,
        VeracityLabel::Unverified,
    ];

    fn index(self) -> usize {
        self as usize
    }

    fn code(self) -> &'static str {
        match self {
            VeracityLabel::NonRumor => "N",
            VeracityLabel::True => "T",
            VeracityLabel::False => "F",
            VeracityLabel::Unverified => "U",
        }
    }

    fn name(self) -> &'static str {
        match self {
            VeracityLabel::NonRumor => "Non-Rumor",
            VeracityLabel::True => "True Rumor",
            VeracityLabel::False => "False Rumor",
            VeracityLabel::Unverified => "Unverified Rumor",
        }
    }

    fn from_token(token: &str) -> Option<Self> {
        let norm = normalize_token(token);
        let label = match norm.as_str() {
            "n" | "non rumor" | "nonrumor" | "non rumour" | "not a rumor" | "not rumor" => {
                VeracityLabel::NonRumor
            }
            "t" | "true rumor" | "true rumour" | "true" => VeracityLabel::True,
            "f" | "false rumor" | "false rumour" | "false" => VeracityLabel::False,
            "u" | "unverified rumor" | "unverified rumour" | "unverified" => {
                VeracityLabel::Unverified
            }
            _ => return None,
        };
        Some(label)
    }
}

/// Lowercases, maps `-`/`_` to spaces, collapses whitespace and strips
/// surrounding quotes and punctuation.
fn normalize_token(token: &str) -> alloc::string::String {
    let trimmed = token.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '\'' | '"' | '`' | '*' | '.' | ',' | ';' | ':' | '[' | ']' | '(' | ')')
    });
    let mut out = alloc::string::String::with_capacity(trimmed.len());
    let mut pending_space = false;
    for c in trimmed.chars() {
        if c.is_whitespace() || c == '-' || c == '_' {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.extend(c.to_lowercase());
    }
    out
}

macro_rules! label_traits {
    ($ty:ty) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = LabelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                <$ty as ClassLabel>::from_token(s).ok_or_else(|| LabelError::Unknown(s.into()))
            }
        }
    };
}

label_traits!(StanceLabel);
label_traits!(VeracityLabel);

/// A probability vector over one of the 4-class label sets, in canonical order.
pub type Distribution = [f64; NUM_CLASSES];

pub const UNIFORM: Distribution = [0.25; NUM_CLASSES];

pub fn validate_distribution(dist: &Distribution) -> Result<(), LabelError> {
    let mut sum = 0.0;
    for (index, &value) in dist.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(LabelError::BadEntry { index, value });
        }
        sum += value;
    }
    if libm::fabs(sum - 1.0) > SUM_TOLERANCE {
        return Err(LabelError::NotNormalized(sum));
    }
    Ok(())
}

/// Index of the largest entry, ties broken towards canonical order.
pub fn argmax(dist: &Distribution) -> usize {
    let mut best = 0;
    for i in 1..NUM_CLASSES {
        if dist[i] > dist[best] {
            best = i;
        }
    }
    best
}

/// True when `index` is the unique maximum of `dist`.
pub fn is_strict_argmax(dist: &Distribution, index: usize) -> bool {
    (0..NUM_CLASSES).all(|i| i == index || dist[i] < dist[index])
}

pub fn one_hot(index: usize) -> Distribution {
    let mut d = [0.0; NUM_CLASSES];
    d[index] = 1.0;
    d
}

/// One-hot with additive smoothing: the emitted class gets `1 - alpha + alpha/4`,
/// every other class `alpha/4`.
pub fn smoothed_one_hot(index: usize, alpha: f64) -> Distribution {
    let share = alpha / NUM_CLASSES as f64;
    let mut d = [share; NUM_CLASSES];
    d[index] = 1.0 - alpha + share;
    d
}

/// Puts `mass` on `index` and spreads the remainder evenly.
pub fn peaked(index: usize, mass: f64) -> Distribution {
    let rest = (1.0 - mass) / (NUM_CLASSES - 1) as f64;
    let mut d = [rest; NUM_CLASSES];
    d[index] = mass;
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order() {
        assert_eq!(StanceLabel::ALL.map(|l| l.code()), ["S", "D", "Q", "C"]);
        assert_eq!(VeracityLabel::ALL.map(|l| l.code()), ["N", "T", "F", "U"]);
        for (i, l) in VeracityLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(VeracityLabel::from_index(i), Some(*l));
        }
    }

    #[test]
    fn token_synonyms() {
        assert_eq!("True Rumor".parse::<VeracityLabel>(), Ok(VeracityLabel::True));
        assert_eq!("'False Rumor,'".parse::<VeracityLabel>(), Ok(VeracityLabel::False));
        assert_eq!("non-rumor".parse::<VeracityLabel>(), Ok(VeracityLabel::NonRumor));
        assert_eq!("Unverified  Rumor".parse::<VeracityLabel>(), Ok(VeracityLabel::Unverified));
        assert_eq!("DENY".parse::<StanceLabel>(), Ok(StanceLabel::Deny));
        assert!("maybe".parse::<StanceLabel>().is_err());
    }

    #[test]
    fn smoothing_keeps_argmax() {
        for i in 0..NUM_CLASSES {
            for alpha in [0.0, 0.1, 0.5, 0.999] {
                let d = smoothed_one_hot(i, alpha);
                validate_distribution(&d).unwrap();
                assert!(is_strict_argmax(&d, i));
            }
        }
        let d = smoothed_one_hot(1, 0.1);
        assert!((d[1] - 0.925).abs() < 1e-15);
        assert!((d[0] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_break_canonically() {
        assert_eq!(argmax(&UNIFORM), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }

    #[test]
    fn rejects_bad_distributions() {
        assert!(validate_distribution(&[0.5, 0.5, 0.1, 0.0]).is_err());
        assert!(validate_distribution(&[1.5, -0.5, 0.0, 0.0]).is_err());
        assert!(validate_distribution(&[f64::NAN, 0.0, 0.0, 1.0]).is_err());
    }
}
