//! Line-delimited JSON claim files.
//!
//! One claim per line:
//! `{"claim_id", "text", "veracity": "N"|"T"|"F"|"U"|null, "posts": [{"post_id", "text", "author", "timestamp", "reply_to", "stance"?}]}`

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rumorsel_core::corpus::{Claim, CorpusError, Dataset};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Record { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: CorpusError },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Reads a JSONL claim file. Blank lines are ignored; threads are re-sorted
/// chronologically.
pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut claims = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let claim: Claim = serde_json::from_str(&line).map_err(|e| DatasetError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        claims.push(claim);
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(name, claims).map_err(|source| DatasetError::Invalid { path: path.to_path_buf(), source })
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for claim in &dataset.claims {
        serde_json::to_writer(&mut out, claim).expect("claims serialize");
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}
