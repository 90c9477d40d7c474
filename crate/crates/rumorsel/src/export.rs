//! Fine-tune and embedding exports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rumorsel_core::annotate::FineTuneExample;
use rumorsel_core::state::Embedder;

use crate::runlog::{read_log, LogEvent};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot read run log {path}: {message}")]
    Log { path: PathBuf, message: String },
    #[error("embedding failed for post {post_id}: {message}")]
    Embed { post_id: String, message: String },
}

fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<usize, ExportError> {
    let io = |source| ExportError::Io { path: path.to_path_buf(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(records.len())
}

/// Writes records as JSONL in the given order and returns the count.
pub fn export_finetune_set(records: &[FineTuneExample], path: &Path) -> Result<usize, ExportError> {
    write_jsonl(records, path)
}

pub fn read_finetune_set(path: &Path) -> anyhow::Result<Vec<FineTuneExample>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub post_id: String,
    pub stance: String,
    pub vector: Vec<f64>,
}

/// Embeds every SD annotation in a run log as "post stance reason" and
/// writes `{post_id, stance, vector}` lines. When a post was annotated in
/// several epochs the last annotation wins; records follow first-seen order.
pub fn export_embeddings(log_path: &Path, embedder: &dyn Embedder, out: &Path) -> Result<usize, ExportError> {
    let events = read_log(log_path).map_err(|e| ExportError::Log { path: log_path.to_path_buf(), message: e.to_string() })?;
    let mut order: Vec<String> = Vec::new();
    let mut latest = std::collections::HashMap::new();
    for ev in events {
        if let LogEvent::Annotation(a) = ev {
            if !latest.contains_key(&a.post_id) {
                order.push(a.post_id.clone());
            }
            latest.insert(a.post_id.clone(), a);
        }
    }
    let mut records = Vec::with_capacity(order.len());
    for id in order {
        let a = &latest[&id];
        let text = format!("{} {} {}", a.text, a.stance, a.explanation);
        let v = embedder.embed(&text).map_err(|e| ExportError::Embed { post_id: id.clone(), message: e.to_string() })?;
        records.push(EmbeddingRecord { post_id: id, stance: a.stance.clone(), vector: v.values });
    }
    write_jsonl(&records, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runlog::{AnnotationEvent, RunLog};
    use rumorsel_core::annotate::{LabelOrigin, Task};
    use rumorsel_core::state::HashedEmbedder;

    fn example(task: Task, n: usize) -> FineTuneExample {
        FineTuneExample {
            task,
            prompt: format!("prompt {n}"),
            target: format!("target {n}"),
            claim_id: "c".into(),
            post_id: None,
            label_origin: LabelOrigin::Machine,
        }
    }

    #[test]
    fn finetune_export_counts_and_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.jsonl");
        assert_eq!(export_finetune_set(&[], &empty).unwrap(), 0);
        assert_eq!(std::fs::read(&empty).unwrap(), b"");

        let mut records: Vec<_> = (0..3).map(|i| example(Task::Stance, i)).collect();
        records.extend((0..2).map(|i| example(Task::Veracity, i)));
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        assert_eq!(export_finetune_set(&records, &a).unwrap(), 5);
        export_finetune_set(&records, &b).unwrap();
        let text = std::fs::read_to_string(&a).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text, std::fs::read_to_string(&b).unwrap());
        assert_eq!(read_finetune_set(&a).unwrap(), records);
    }

    #[test]
    fn finetune_export_reports_path() {
        let err = export_finetune_set(&[], Path::new("/nonexistent-dir/x.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.jsonl"));
    }

    #[test]
    fn embedding_export() {
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("run.jsonl");
        let emb = HashedEmbedder::new(16);

        RunLog::append(&log_path).unwrap();
        let out0 = dir.path().join("e0.jsonl");
        assert_eq!(export_embeddings(&log_path, &emb, &out0).unwrap(), 0);
        assert_eq!(std::fs::read(&out0).unwrap(), b"");

        let mut log = RunLog::append(&log_path).unwrap();
        for i in 0..5 {
            log.write(&LogEvent::Annotation(AnnotationEvent {
                ts: 0,
                epoch: 0,
                claim_id: "c".into(),
                post_id: format!("p{i}"),
                text: format!("post {i}"),
                stance: "Support".into(),
                explanation: "agrees".into(),
            }))
            .unwrap();
        }
        log.flush().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        assert_eq!(export_embeddings(&log_path, &emb, &a).unwrap(), 5);
        export_embeddings(&log_path, &emb, &b).unwrap();
        let text = std::fs::read_to_string(&a).unwrap();
        for line in text.lines() {
            let r: EmbeddingRecord = serde_json::from_str(line).unwrap();
            assert_eq!(r.vector.len(), 16);
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
