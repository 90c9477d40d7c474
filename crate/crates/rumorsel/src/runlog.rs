//! Line-delimited JSON run log.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use rumorsel_core::policy::{Action, Level};
use rumorsel_core::reward::Reward;

/// One selector decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    pub epoch: u32,
    pub claim_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_id: Option<String>,
    pub level: Level,
    pub action: Action,
    pub reward: Option<Reward>,
    pub cosine: f64,
    pub p_retain: f64,
}

/// One SD annotation, kept so embeddings can be exported after the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub ts: u64,
    pub epoch: u32,
    pub claim_id: String,
    pub post_id: String,
    pub text: String,
    pub stance: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogEvent {
    Step(StepEvent),
    Annotation(AnnotationEvent),
    Warning { ts: u64, message: String },
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub struct RunLog {
    out: Option<BufWriter<File>>,
}

impl RunLog {
    /// Appends to `path`, creating it if needed.
    pub fn append(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { out: Some(BufWriter::new(file)) })
    }

    /// Discards every event.
    pub fn sink() -> Self {
        Self { out: None }
    }

    pub fn write(&mut self, event: &LogEvent) -> std::io::Result<()> {
        if let Some(out) = &mut self.out {
            serde_json::to_writer(&mut *out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        match &mut self.out {
            Some(out) => out.flush(),
            None => Ok(()),
        }
    }
}

/// Reads every event of a log; malformed lines are an error.
pub fn read_log(path: &Path) -> anyhow::Result<Vec<LogEvent>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let step = LogEvent::Step(StepEvent {
            ts: 1,
            epoch: 0,
            claim_id: "c1".into(),
            post_id: Some("p1".into()),
            level: Level::Post,
            action: Action::Retain,
            reward: Some(Reward::Positive),
            cosine: 0.5,
            p_retain: 0.25,
        });
        let warn = LogEvent::Warning { ts: 2, message: "x".into() };
        let mut log = RunLog::append(&path).unwrap();
        log.write(&step).unwrap();
        log.write(&warn).unwrap();
        log.flush().unwrap();
        let line = std::fs::read_to_string(&path).unwrap();
        assert!(line.starts_with(r#"{"event":"step","ts":1,"epoch":0,"claim_id":"c1","post_id":"p1","level":"post","action":"retain","reward":1"#));
        assert_eq!(read_log(&path).unwrap(), vec![step, warn]);
    }
}
