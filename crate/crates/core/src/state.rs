//! Text embeddings and the three-part selector state
//! `[claim embedding ‖ mean of retained-instance embeddings ‖ current explanation embedding]`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Claim, Post};
use crate::labels::ClassLabel;
use crate::prompt::Annotation;

pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingSource {
    Service,
    HashedTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source: EmbeddingSource,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding service failed: {0}")]
    Transport(String),
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
}

/// Anything that maps text to a fixed-dimension vector.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }
}

/// Deterministic bag-of-words embedding: lowercased whitespace tokens are
/// hashed (FNV-1a) into `dim` buckets and the counts L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    dim: usize,
}

impl HashedEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut values = vec![0.0; self.dim];
        for token in text.split_whitespace() {
            values[self.bucket(&token.to_lowercase())] += 1.0;
        }
        let norm = libm::sqrt(values.iter().map(|x| x * x).sum::<f64>());
        if norm > 0.0 {
            values.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(EmbeddingVector { values, source: EmbeddingSource::HashedTest })
    }
}

/// Text embedded for a post instance: post, stance and reason packed together.
pub fn post_instance_text<L: ClassLabel>(post: &Post, ann: &Annotation<L>) -> String {
    format!("{} {} {}", post.text, ann.label.name(), ann.explanation)
}

pub fn claim_instance_text<L: ClassLabel>(claim: &Claim, ann: &Annotation<L>) -> String {
    format!("{} {} {}", claim.text, ann.label.name(), ann.explanation)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("state part `{part}` has dimension {got}, expected {expected}")]
    Dimension { part: &'static str, expected: usize, got: usize },
    #[error("state part `{0}` contains non-finite values")]
    NonFinite(&'static str),
}

/// Running mean of the embeddings of retained instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextAccumulator {
    running_sum: Vec<f64>,
    count: usize,
}

impl ContextAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { running_sum: vec![0.0; dim], count: 0 }
    }

    pub fn dim(&self) -> usize {
        self.running_sum.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds a retained instance. Discarded instances must never be passed here.
    pub fn update(&mut self, instance: &[f64]) -> Result<(), StateError> {
        if instance.len() != self.dim() {
            return Err(StateError::Dimension { part: "instance", expected: self.dim(), got: instance.len() });
        }
        for (s, x) in self.running_sum.iter_mut().zip(instance) {
            *s += x;
        }
        self.count += 1;
        Ok(())
    }

    /// Zero vector while empty.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.running_sum.iter().map(|s| s / n).collect()
    }
}

/// Concatenated selector input of dimension `3d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyState(Vec<f64>);

impl PolicyState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Wraps a raw vector, e.g. for gradient checks.
    pub fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }
}

pub fn build_state(claim: &[f64], ctx: &ContextAccumulator, explanation: &[f64]) -> Result<PolicyState, StateError> {
    let d = claim.len();
    let check = |part, v: &[f64]| {
        if v.len() != d {
            Err(StateError::Dimension { part, expected: d, got: v.len() })
        } else if v.iter().any(|x| !x.is_finite()) {
            Err(StateError::NonFinite(part))
        } else {
            Ok(())
        }
    };
    check("claim", claim)?;
    let context = ctx.mean();
    check("context", &context)?;
    check("explanation", explanation)?;
    let mut out = Vec::with_capacity(3 * d);
    out.extend_from_slice(claim);
    out.extend_from_slice(&context);
    out.extend_from_slice(explanation);
    Ok(PolicyState(out))
}
