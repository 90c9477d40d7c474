//! HTTP annotator and embedding clients.
//!
//! Annotate: `POST {endpoint}/annotate {"task","prompt"}` →
//! `{"label","explanation","distribution"?}`.
//! Fine-tune: `POST {endpoint}/finetune {"task","origin","examples":[{"prompt","target"}]}` → `{"job"}`.
//! Embed: `POST {endpoint}/embed {"text"}` → `{"vector"}`.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use rumorsel_core::annotate::{
    AnnotationRequest, Annotator, AnnotatorError, BackendReply, FineTuneAck, FineTuneBatch, FineTuneOrigin,
};
use rumorsel_core::prompt::ParseError;
use rumorsel_core::state::{EmbedError, Embedder, EmbeddingSource, EmbeddingVector};

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into()
}

fn route(endpoint: &str, path: &str) -> String {
    format!("{}/{path}", endpoint.trim_end_matches('/'))
}

#[derive(Serialize)]
struct AnnotateBody<'a> {
    task: &'a str,
    prompt: &'a str,
}

#[derive(Serialize)]
struct FineTuneItem<'a> {
    prompt: &'a str,
    target: &'a str,
}

#[derive(Serialize)]
struct FineTuneBody<'a> {
    task: &'a str,
    origin: FineTuneOrigin,
    examples: Vec<FineTuneItem<'a>>,
}

#[derive(Deserialize)]
struct FineTuneResponse {
    job: String,
}

/// Remote LLM annotator. One HTTP attempt per call; retries are the caller's job.
pub struct HttpAnnotator {
    agent: ureq::Agent,
    endpoint: String,
    smoothing_alpha: f64,
    jobs: Mutex<Vec<String>>,
}

impl HttpAnnotator {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, smoothing_alpha: f64) -> Self {
        Self { agent: agent(timeout), endpoint: endpoint.into(), smoothing_alpha, jobs: Mutex::new(Vec::new()) }
    }

    /// Job tokens returned by the fine-tune route so far.
    pub fn jobs(&self) -> Vec<String> {
        self.jobs.lock().expect("jobs lock").clone()
    }

    fn post<T: Serialize>(&self, path: &str, body: &T) -> Result<String, AnnotatorError> {
        self.agent
            .post(route(&self.endpoint, path))
            .send_json(body)
            .and_then(|r| r.into_body().read_to_string())
            .map_err(|e| AnnotatorError::Transport(e.to_string()))
    }
}

impl Annotator for HttpAnnotator {
    fn complete(&self, req: &AnnotationRequest<'_>) -> Result<BackendReply, AnnotatorError> {
        let text = self.post("annotate", &AnnotateBody { task: req.task.as_str(), prompt: req.prompt })?;
        let mut reply: BackendReply =
            serde_json::from_str(&text).map_err(|_| AnnotatorError::Parse(ParseError { raw: text.clone() }))?;
        reply.raw = text;
        Ok(reply)
    }

    fn fine_tune(&self, batch: &FineTuneBatch<'_>) -> Result<FineTuneAck, AnnotatorError> {
        let body = FineTuneBody {
            task: batch.task.as_str(),
            origin: batch.origin,
            examples: batch.examples.iter().map(|e| FineTuneItem { prompt: &e.prompt, target: &e.target }).collect(),
        };
        let text = self.post("finetune", &body)?;
        let resp: FineTuneResponse =
            serde_json::from_str(&text).map_err(|e| AnnotatorError::Transport(format!("bad fine-tune response: {e}")))?;
        self.jobs.lock().expect("jobs lock").push(resp.job.clone());
        Ok(FineTuneAck::Job(resp.job))
    }

    fn smoothing_alpha(&self) -> f64 {
        self.smoothing_alpha
    }
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

/// Remote sentence encoder; transport failures are retried twice.
pub struct HttpEmbedder {
    agent: ureq::Agent,
    endpoint: String,
    dim: usize,
}

pub const EMBED_RETRIES: usize = 2;

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, dim: usize, timeout: Duration) -> Self {
        Self { agent: agent(timeout), endpoint: endpoint.into(), dim }
    }

    fn once(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        self.agent
            .post(route(&self.endpoint, "embed"))
            .send_json(EmbedBody { text })
            .and_then(|r| r.into_body().read_json::<EmbedResponse>())
            .map(|r| r.vector)
            .map_err(|e| EmbedError::Transport(e.to_string()))
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut last = None;
        for _ in 0..=EMBED_RETRIES {
            match self.once(text) {
                Ok(values) => {
                    if values.len() != self.dim {
                        return Err(EmbedError::Dimension { expected: self.dim, got: values.len() });
                    }
                    if values.iter().any(|x| !x.is_finite()) {
                        return Err(EmbedError::NonFinite);
                    }
                    return Ok(EmbeddingVector { values, source: EmbeddingSource::Service });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}
