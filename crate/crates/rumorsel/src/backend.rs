//! Backend selection: which annotator and embedder a run talks to.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use rumorsel_core::annotate::Annotator;
use rumorsel_core::corpus::SynthConfig;
use rumorsel_core::labels::{StanceLabel, NUM_CLASSES};
use rumorsel_core::oracle::{OracleAnnotator, OracleConfig};
use rumorsel_core::state::{Embedder, HashedEmbedder, DEFAULT_DIM};

use crate::config::ConfigError;
use crate::http::{HttpAnnotator, HttpEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    #[default]
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub oracle_accuracy: f64,
    /// Falls back to the run-level value when unset.
    pub smoothing_alpha: Option<f64>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    /// Dominant stance under each veracity class (N, T, F, U); oracle only.
    pub modal_stances: [StanceLabel; NUM_CLASSES],
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Oracle,
            endpoint: None,
            oracle_accuracy: 0.9,
            smoothing_alpha: None,
            timeout_secs: 60,
            max_in_flight: 4,
            modal_stances: SynthConfig::default().modal_stances(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self, section: &str) -> Result<(), ConfigError> {
        if self.kind == BackendKind::Http && self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
            return Err(ConfigError::field(format!("{section}.endpoint"), "required when kind = \"http\""));
        }
        if !(0.0..=1.0).contains(&self.oracle_accuracy) {
            return Err(ConfigError::field(format!("{section}.oracle_accuracy"), "must lie in [0, 1]"));
        }
        if let Some(a) = self.smoothing_alpha {
            if !(0.0..1.0).contains(&a) {
                return Err(ConfigError::field(format!("{section}.smoothing_alpha"), "must lie in [0, 1)"));
            }
        }
        if self.timeout_secs == 0 {
            return Err(ConfigError::field(format!("{section}.timeout_secs"), "must be positive"));
        }
        if self.max_in_flight == 0 {
            return Err(ConfigError::field(format!("{section}.max_in_flight"), "must be at least 1"));
        }
        Ok(())
    }

    pub fn build(&self, default_alpha: f64, seed: u64) -> Box<dyn Annotator> {
        let alpha = self.smoothing_alpha.unwrap_or(default_alpha);
        match self.kind {
            BackendKind::Oracle => Box::new(OracleAnnotator::new(OracleConfig {
                accuracy: self.oracle_accuracy,
                smoothing_alpha: alpha,
                seed,
                modal_stances: self.modal_stances,
            })),
            BackendKind::Http => Box::new(HttpAnnotator::new(
                self.endpoint.clone().unwrap_or_default(),
                Duration::from_secs(self.timeout_secs),
                alpha,
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    #[default]
    Hashed,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub kind: EmbedKind,
    pub endpoint: Option<String>,
    pub dim: usize,
    pub timeout_secs: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { kind: EmbedKind::Hashed, endpoint: None, dim: DEFAULT_DIM, timeout_secs: 60 }
    }
}

pub type SharedEmbedder = Box<dyn Embedder + Send + Sync>;

impl EmbedConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.kind == EmbedKind::Http && self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
            return Err(ConfigError::field("embed.endpoint", "required when kind = \"http\""));
        }
        if self.dim == 0 {
            return Err(ConfigError::field("embed.dim", "must be positive"));
        }
        if self.timeout_secs == 0 {
            return Err(ConfigError::field("embed.timeout_secs", "must be positive"));
        }
        Ok(())
    }

    pub fn build(&self) -> SharedEmbedder {
        match self.kind {
            EmbedKind::Hashed => Box::new(HashedEmbedder::new(self.dim)),
            EmbedKind::Http => Box::new(HttpEmbedder::new(
                self.endpoint.clone().unwrap_or_default(),
                self.dim,
                Duration::from_secs(self.timeout_secs),
            )),
        }
    }
}
