//! Prompt templates for the stance (SD) and veracity (RV) annotators and the
//! parsers for their `Label: X, Reason: Y` responses.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Claim, Post};
use crate::labels::{
    argmax, smoothed_one_hot, validate_distribution, ClassLabel, Distribution,
    StanceLabel, VeracityLabel,
};

/// Default additive smoothing applied when a backend returns no distribution.
pub const DEFAULT_SMOOTHING: f64 = 0.1;

pub const STANCE_LABEL_LIST: &str = "Support, Deny, Question, and Comment";
pub const STANCE_FORMAT_LINE: &str = "Stance: [stance], Reason:[reason]";
pub const VERACITY_LABEL_LIST: &str = "'True Rumor,' 'False Rumor,' 'Unverified Rumor,' or 'Non-Rumor,'";
pub const VERACITY_FORMAT_LINE: &str = "Veracity: [veracity], Reason: [reason]";
pub const NO_RETAINED_POSTS: &str = "No responding posts retained.";
/// Separator between a listed post and its stance in the veracity prompt.
pub const POST_STANCE_SEPARATOR: &str = " || Stance: ";
pub const POSTS_HEADER: &str = "Related posts:";

/// Fills the stance template for one post.
pub fn build_stance_prompt(claim: &Claim, post: &Post) -> String {
    format!(
        "There is a claim {claim} and I will give you its corresponding conversation thread on Twitter. \
         The conversation thread consists of a sequence of posts and each post {post} is written by a user {user}. \
         Please decide the stance expressed by each post towards the claim and explain why, \
         and the stance can be one of the following labels: {STANCE_LABEL_LIST}. \
         Please follow the format: {STANCE_FORMAT_LINE}.",
        claim = claim.text,
        post = post.text,
        user = post.author,
    )
}

/// Fills the veracity template and lists the retained posts with their
/// annotated stances, in selection order.
pub fn build_veracity_prompt<'a, I>(claim: &Claim, retained: I) -> String
where
    I: IntoIterator<Item = (&'a Post, &'a StanceAnnotation)>,
{
    let mut out = format!(
        "There is a claim {claim}, I will give you its related posts, each expressing a stance toward this claim. \
         Please determine the veracity of the claim, categorizing it as {VERACITY_LABEL_LIST} \
         and explain your reasoning. Please follows the format: {VERACITY_FORMAT_LINE}.\n{POSTS_HEADER}\n",
        claim = claim.text,
    );
    let mut n = 0;
    for (post, ann) in retained {
        n += 1;
        let _ = writeln!(
            out,
            "{n}. Post by {}: {}{POST_STANCE_SEPARATOR}{}",
            post.author,
            post.text,
            ann.label.name()
        );
    }
    if n == 0 {
        out.push_str(NO_RETAINED_POSTS);
        out.push('\n');
    }
    out
}

/// Stance labels listed in a veracity prompt, in order.
pub fn listed_stances(veracity_prompt: &str) -> Vec<StanceLabel> {
    let Some(start) = veracity_prompt.find(POSTS_HEADER) else {
        return Vec::new();
    };
    veracity_prompt[start + POSTS_HEADER.len()..]
        .lines()
        .filter_map(|line| {
            let (_, label) = line.rsplit_once(POST_STANCE_SEPARATOR)?;
            StanceLabel::from_token(label)
        })
        .collect()
}

/// An annotator's label for one instance, with its class distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation<L> {
    pub label: L,
    pub distribution: Distribution,
    pub explanation: String,
    pub raw: String,
}

pub type StanceAnnotation = Annotation<StanceLabel>;
pub type VeracityAnnotation = Annotation<VeracityLabel>;

impl<L: ClassLabel> Annotation<L> {
    /// Uses `distribution` when it is a valid probability vector whose argmax
    /// (ties to canonical order) is `label`; otherwise falls back to the
    /// smoothed one-hot.
    pub fn new(
        label: L,
        explanation: String,
        raw: String,
        distribution: Option<Distribution>,
        alpha: f64,
    ) -> Self {
        let distribution = distribution
            .filter(|d| validate_distribution(d).is_ok() && argmax(d) == label.index())
            .unwrap_or_else(|| smoothed_one_hot(label.index(), alpha));
        Self { label, distribution, explanation, raw }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no recognizable label in response: {raw:?}")]
pub struct ParseError {
    pub raw: String,
}

/// ASCII case-insensitive substring search.
fn find_ci(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (from..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

/// Parses `<key>: <label>, Reason: <reason>` leniently: case-insensitive,
/// surrounding prose allowed, first occurrence with a recognizable label wins.
pub fn parse_response<L: ClassLabel>(raw: &str, key: &str, alpha: f64) -> Result<Annotation<L>, ParseError> {
    let key = format!("{key}:");
    let mut from = 0;
    while let Some(at) = find_ci(raw, &key, from) {
        let start = at + key.len();
        let rest = &raw[start..];
        let mut end = rest.find([',', '\n']).unwrap_or(rest.len());
        if let Some(r) = find_ci(rest, "reason:", 0) {
            end = end.min(r);
        }
        if let Some(label) = L::from_token(&rest[..end]) {
            let explanation = find_ci(rest, "reason:", end)
                .map(|r| rest[r + "reason:".len()..].trim())
                .unwrap_or("");
            return Ok(Annotation::new(label, explanation.into(), raw.into(), None, alpha));
        }
        from = start;
    }
    Err(ParseError { raw: raw.into() })
}

pub fn parse_stance_response(raw: &str) -> Result<StanceAnnotation, ParseError> {
    parse_response(raw, "stance", DEFAULT_SMOOTHING)
}

pub fn parse_veracity_response(raw: &str) -> Result<VeracityAnnotation, ParseError> {
    parse_response(raw, "veracity", DEFAULT_SMOOTHING)
}

/// Target string for a stance fine-tuning example.
pub fn format_stance_target(label: StanceLabel, reason: &str) -> String {
    format!("Stance: {}, Reason: {}", label.name(), reason)
}

pub fn format_veracity_target(label: VeracityLabel, reason: &str) -> String {
    format!("Veracity: {}, Reason: {}", label.name(), reason)
}
