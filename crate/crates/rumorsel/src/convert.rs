//! Converter for RumorEval-style thread directories.
//!
//! Layout: any directory containing `source-tweet/<id>.json` is a thread;
//! its `replies/*.json` become posts. Tweets carry `id_str`, `text`,
//! `user.screen_name`, `created_at` (`Wed Jan 07 11:06:08 +0000 2015`) and
//! `in_reply_to_status_id_str`. Label files hold
//! `{"subtaskaenglish": {tweet_id: stance}, "subtaskbenglish": {thread_id: veracity}}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rumorsel_core::corpus::{Claim, CorpusError, Dataset, Post};
use rumorsel_core::labels::{ClassLabel, StanceLabel, VeracityLabel};
use serde::Deserialize;

const TWITTER_DATE: &str = "%a %b %d %H:%M:%S %z %Y";

#[derive(Debug, thiserror::Error)]
pub enum ConvertError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{path}: unparseable created_at {value:?}")]
    Date { path: PathBuf, value: String },
    #[error("{path}: unknown label {value:?} for {id}")]
    Label { path: PathBuf, id: String, value: String },
    #[error("{path}: expected exactly one source tweet, found {found}")]
    Source { path: PathBuf, found: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Deserialize)]
struct User {
    #[serde(default)]
    screen_name: String,
}

#[derive(Debug, Deserialize)]
struct Tweet {
    id_str: String,
    text: String,
    created_at: String,
    #[serde(default)]
    in_reply_to_status_id_str: Option<String>,
    user: Option<User>,
}

#[derive(Debug, Default, Deserialize)]
struct LabelFile {
    #[serde(default)]
    subtaskaenglish: BTreeMap<String, String>,
    #[serde(default)]
    subtaskbenglish: BTreeMap<String, String>,
}

/// Stance and veracity keys merged from one or more label files.
#[derive(Debug, Default, Clone)]
pub struct Labels {
    pub stance: BTreeMap<String, StanceLabel>,
    pub veracity: BTreeMap<String, VeracityLabel>,
}

impl Labels {
    /// Later files override earlier ones on duplicate ids.
    pub fn load(paths: &[PathBuf]) -> Result<Self, ConvertError> {
        let mut out = Labels::default();
        for path in paths {
            let file: LabelFile = read_json(path)?;
            for (id, v) in file.subtaskaenglish {
                let label = StanceLabel::from_token(&v).ok_or_else(|| ConvertError::Label {
                    path: path.clone(),
                    id: id.clone(),
                    value: v.clone(),
                })?;
                out.stance.insert(id, label);
            }
            for (id, v) in file.subtaskbenglish {
                let label = VeracityLabel::from_token(&v).ok_or_else(|| ConvertError::Label {
                    path: path.clone(),
                    id: id.clone(),
                    value: v.clone(),
                })?;
                out.veracity.insert(id, label);
            }
        }
        Ok(out)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConvertError> {
    let raw = fs::read_to_string(path).map_err(|source| ConvertError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&raw).map_err(|e| ConvertError::Json { path: path.to_path_buf(), message: e.to_string() })
}

fn timestamp(path: &Path, created_at: &str) -> Result<i64, ConvertError> {
    chrono::DateTime::parse_from_str(created_at, TWITTER_DATE)
        .map(|t| t.timestamp())
        .map_err(|_| ConvertError::Date { path: path.to_path_buf(), value: created_at.into() })
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, ConvertError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let entries = fs::read_dir(dir).map_err(|source| ConvertError::Io { path: dir.to_path_buf(), source })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|source| ConvertError::Io { path: dir.to_path_buf(), source })?.path();
        if path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Thread directories under `root`, sorted by path.
pub fn find_threads(root: &Path) -> Result<Vec<PathBuf>, ConvertError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("source-tweet").is_dir() {
            out.push(dir);
            continue;
        }
        let entries = fs::read_dir(&dir).map_err(|source| ConvertError::Io { path: dir.clone(), source })?;
        for entry in entries {
            let path = entry.map_err(|source| ConvertError::Io { path: dir.clone(), source })?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// One thread: the source tweet becomes the claim and every reply a post.
/// Replies whose parent is missing from the thread are attached to the claim.
pub fn convert_thread(dir: &Path, labels: &Labels) -> Result<Claim, ConvertError> {
    let sources = json_files(&dir.join("source-tweet"))?;
    if sources.len() != 1 {
        return Err(ConvertError::Source { path: dir.to_path_buf(), found: sources.len() });
    }
    let source: Tweet = read_json(&sources[0])?;
    let claim_id = source.id_str.clone();

    let mut replies = Vec::new();
    for path in json_files(&dir.join("replies"))? {
        let tweet: Tweet = read_json(&path)?;
        if tweet.id_str == claim_id {
            continue;
        }
        let ts = timestamp(&path, &tweet.created_at)?;
        replies.push((tweet, ts));
    }
    let ids: std::collections::BTreeSet<String> = replies.iter().map(|(t, _)| t.id_str.clone()).collect();
    let posts = replies
        .into_iter()
        .map(|(t, ts)| {
            let reply_to = match t.in_reply_to_status_id_str {
                Some(parent) if ids.contains(&parent) => parent,
                _ => claim_id.clone(),
            };
            Post {
                stance: labels.stance.get(&t.id_str).copied(),
                post_id: t.id_str,
                text: t.text,
                author: t.user.map(|u| u.screen_name).unwrap_or_default(),
                timestamp: ts,
                reply_to: Some(reply_to),
            }
        })
        .collect();
    Ok(Claim {
        veracity: labels.veracity.get(&claim_id).copied(),
        claim_id,
        text: source.text,
        posts,
    })
}

/// Converts every thread under `root`. Threads without a veracity key are
/// kept as unlabeled claims.
pub fn convert_threads(root: &Path, labels: &Labels) -> Result<Dataset, ConvertError> {
    let claims = find_threads(root)?
        .iter()
        .map(|dir| convert_thread(dir, labels))
        .collect::<Result<Vec<_>, _>>()?;
    let name = root.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Dataset::new(name, claims)?)
}
