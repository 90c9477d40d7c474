//! Annotator backend contract and the retrying annotate calls built on it.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Claim, Post};
use crate::labels::{ClassLabel, Distribution, NUM_CLASSES};
use crate::prompt::{
    build_stance_prompt, build_veracity_prompt, parse_response, Annotation, ParseError, StanceAnnotation,
    VeracityAnnotation, DEFAULT_SMOOTHING,
};

/// Transport failures are retried this many times before giving up.
pub const TRANSPORT_RETRIES: usize = 2;
/// Unparseable responses are retried this many times before the instance is skipped.
pub const PARSE_RETRIES: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Stance,
    Veracity,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Stance => "stance",
            Task::Veracity => "veracity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRequest<'a> {
    pub task: Task,
    pub prompt: &'a str,
    /// Deterministic per-request key; stochastic backends seed from it so
    /// results do not depend on call order.
    pub key: u64,
}

/// What a backend sends back for one prompt.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BackendReply {
    pub label: String,
    #[serde(default)]
    pub explanation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<Vec<f64>>,
    #[serde(skip)]
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelOrigin {
    Human,
    Machine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuneExample {
    pub task: Task,
    pub prompt: String,
    pub target: String,
    pub claim_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_id: Option<String>,
    pub label_origin: LabelOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineTuneOrigin {
    Selection,
    Pretrain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FineTuneBatch<'a> {
    pub task: Task,
    pub origin: FineTuneOrigin,
    pub examples: &'a [FineTuneExample],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineTuneAck {
    Skipped,
    Job(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnnotatorError {
    #[error("annotator transport failure: {0}")]
    Transport(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
}

/// A stance or veracity annotator. Implementations must tolerate concurrent calls.
pub trait Annotator: Send + Sync {
    fn complete(&self, req: &AnnotationRequest<'_>) -> Result<BackendReply, AnnotatorError>;

    fn fine_tune(&self, batch: &FineTuneBatch<'_>) -> Result<FineTuneAck, AnnotatorError>;

    /// Smoothing used when a reply carries no distribution.
    fn smoothing_alpha(&self) -> f64 {
        DEFAULT_SMOOTHING
    }
}

impl<A: Annotator + ?Sized> Annotator for &A {
    fn complete(&self, req: &AnnotationRequest<'_>) -> Result<BackendReply, AnnotatorError> {
        (**self).complete(req)
    }
    fn fine_tune(&self, batch: &FineTuneBatch<'_>) -> Result<FineTuneAck, AnnotatorError> {
        (**self).fine_tune(batch)
    }
    fn smoothing_alpha(&self) -> f64 {
        (**self).smoothing_alpha()
    }
}

impl<A: Annotator + ?Sized> Annotator for alloc::boxed::Box<A> {
    fn complete(&self, req: &AnnotationRequest<'_>) -> Result<BackendReply, AnnotatorError> {
        (**self).complete(req)
    }
    fn fine_tune(&self, batch: &FineTuneBatch<'_>) -> Result<FineTuneAck, AnnotatorError> {
        (**self).fine_tune(batch)
    }
    fn smoothing_alpha(&self) -> f64 {
        (**self).smoothing_alpha()
    }
}

fn to_distribution(v: &Option<Vec<f64>>) -> Option<Distribution> {
    let v = v.as_ref()?;
    (v.len() == NUM_CLASSES).then(|| core::array::from_fn(|i| v[i]))
}

/// Turns a structured reply into an annotation. The label field may be a bare
/// label token or free text in the `Key: label, Reason: ...` grammar.
pub fn reply_to_annotation<L: ClassLabel>(reply: BackendReply, key: &str, alpha: f64) -> Result<Annotation<L>, ParseError> {
    let raw = if reply.raw.is_empty() { reply.label.clone() } else { reply.raw.clone() };
    let distribution = to_distribution(&reply.distribution);
    if let Some(label) = L::from_token(&reply.label) {
        return Ok(Annotation::new(label, reply.explanation, raw, distribution, alpha));
    }
    for text in [&reply.label, &reply.raw, &reply.explanation] {
        if let Ok(parsed) = parse_response::<L>(text, key, alpha) {
            let explanation = if parsed.explanation.is_empty() { reply.explanation.clone() } else { parsed.explanation };
            return Ok(Annotation::new(parsed.label, explanation, raw, distribution, alpha));
        }
    }
    Err(ParseError { raw })
}

fn annotate_with_retries<L: ClassLabel, A: Annotator + ?Sized>(
    backend: &A,
    task: Task,
    prompt: &str,
    key: u64,
) -> Result<Annotation<L>, AnnotatorError> {
    let mut transport_failures = 0;
    let mut parse_failures = 0;
    let mut attempt: u64 = 0;
    loop {
        let req = AnnotationRequest { task, prompt, key: key.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15)) };
        attempt += 1;
        match backend.complete(&req) {
            Ok(reply) => match reply_to_annotation::<L>(reply, task.as_str(), backend.smoothing_alpha()) {
                Ok(a) => return Ok(a),
                Err(_) if parse_failures < PARSE_RETRIES => parse_failures += 1,
                Err(e) => return Err(AnnotatorError::Parse(e)),
            },
            Err(AnnotatorError::Transport(_)) if transport_failures < TRANSPORT_RETRIES => transport_failures += 1,
            Err(AnnotatorError::Parse(_)) if parse_failures < PARSE_RETRIES => parse_failures += 1,
            Err(e) => return Err(e),
        }
    }
}

/// Builds the stance prompt for `post`, queries the backend and parses the
/// reply, retrying transport failures twice and parse failures once.
pub fn annotate_post<A: Annotator + ?Sized>(
    backend: &A,
    claim: &Claim,
    post: &Post,
    key: u64,
) -> Result<StanceAnnotation, AnnotatorError> {
    annotate_with_retries(backend, Task::Stance, &build_stance_prompt(claim, post), key)
}

pub fn annotate_claim<'a, A, I>(backend: &A, claim: &Claim, retained: I, key: u64) -> Result<VeracityAnnotation, AnnotatorError>
where
    A: Annotator + ?Sized,
    I: IntoIterator<Item = (&'a Post, &'a StanceAnnotation)>,
{
    annotate_with_retries(backend, Task::Veracity, &build_veracity_prompt(claim, retained), key)
}
