//! Run configuration: one TOML file, endpoint overrides from the environment
//! and from flags. Precedence is flag > env > file > default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rumorsel_core::policy::LrSchedule;
use rumorsel_core::prompt::DEFAULT_SMOOTHING;
use rumorsel_core::reward::SimilarityMode;

use crate::backend::{BackendConfig, EmbedConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config field `{field}`: {message}")]
    Field { field: String, message: String },
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field { field: field.into(), message: message.into() }
    }
}

/// When post-level rewards are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RewardTiming {
    /// All rewards at claim end from the final veracity prediction.
    #[default]
    Terminal,
    /// Veracity re-predicted after every retained post; one extra call per sub-step.
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    pub seed_fraction: f64,
    pub epsilon: f64,
    /// Consecutive +1 claim rewards that stop training.
    pub n_termination: usize,
    /// Consecutive +1 post rewards that end a claim's post sub-loop.
    pub n_termination_post: usize,
    pub max_posts: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub warmup: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: u32,
    pub max_epochs: u32,
    pub smoothing_alpha: f64,
    pub centering: bool,
    pub rng_seed: u64,
    pub reward_timing: RewardTiming,
    /// Trajectories the objective spans at each update; unset means the whole
    /// epoch so far.
    pub update_window: Option<usize>,
    /// Moving-average reward baseline; off keeps the objective literal.
    pub baseline: bool,
    pub baseline_momentum: f64,
    /// Stance corpus forwarded to the stance backend before training.
    pub pretrain_corpus: Option<PathBuf>,
    pub sd: BackendConfig,
    pub rv: BackendConfig,
    pub embed: EmbedConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("dataset.jsonl"),
            output_dir: PathBuf::from("out"),
            seed_fraction: 0.5,
            epsilon: 0.3,
            n_termination: 100,
            n_termination_post: 100,
            max_posts: 30,
            hidden_dim: rumorsel_core::policy::DEFAULT_HIDDEN,
            learning_rate: 5e-5,
            warmup: 0.1,
            lr_schedule: LrSchedule::Constant,
            batch_size: 4,
            max_epochs: 50,
            smoothing_alpha: DEFAULT_SMOOTHING,
            centering: true,
            rng_seed: 0,
            reward_timing: RewardTiming::Terminal,
            update_window: None,
            baseline: false,
            baseline_momentum: 0.9,
            pretrain_corpus: None,
            sd: BackendConfig::default(),
            rv: BackendConfig::default(),
            embed: EmbedConfig::default(),
        }
    }
}

/// Endpoint overrides; each one beats the file value when set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EndpointOverrides {
    pub sd: Option<String>,
    pub rv: Option<String>,
    pub embed: Option<String>,
}

impl EndpointOverrides {
    pub fn from_env() -> Self {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Self {
        Self { sd: lookup("SD_ENDPOINT"), rv: lookup("RV_ENDPOINT"), embed: lookup("EMBED_ENDPOINT") }
    }

    /// `self` wins over `other` field by field.
    pub fn or(self, other: EndpointOverrides) -> Self {
        Self { sd: self.sd.or(other.sd), rv: self.rv.or(other.rv), embed: self.embed.or(other.embed) }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        Ok(cfg)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::load_with(path, &EndpointOverrides::default())
    }

    /// Reads a config file, applies endpoint overrides, then validates.
    pub fn load_with(path: &Path, overrides: &EndpointOverrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        cfg.apply_overrides(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply_overrides(&mut self, o: &EndpointOverrides) {
        if let Some(e) = &o.sd {
            self.sd.endpoint = Some(e.clone());
        }
        if let Some(e) = &o.rv {
            self.rv.endpoint = Some(e.clone());
        }
        if let Some(e) = &o.embed {
            self.embed.endpoint = Some(e.clone());
        }
    }

    pub fn similarity_mode(&self) -> SimilarityMode {
        if self.centering {
            SimilarityMode::Centered
        } else {
            SimilarityMode::Raw
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn unit(name: &str, v: f64) -> Result<(), ConfigError> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::field(name, "must lie in [0, 1]"))
            }
        }
        fn positive(name: &str, v: usize) -> Result<(), ConfigError> {
            if v > 0 {
                Ok(())
            } else {
                Err(ConfigError::field(name, "must be at least 1"))
            }
        }
        if self.seed_fraction <= 0.0 || self.seed_fraction > 1.0 {
            return Err(ConfigError::field("seed_fraction", "must lie in (0, 1]"));
        }
        unit("epsilon", self.epsilon)?;
        positive("n_termination", self.n_termination)?;
        positive("n_termination_post", self.n_termination_post)?;
        positive("max_posts", self.max_posts)?;
        positive("hidden_dim", self.hidden_dim)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfigError::field("learning_rate", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(ConfigError::field("warmup", "must lie in [0, 1)"));
        }
        positive("batch_size", self.batch_size as usize)?;
        positive("max_epochs", self.max_epochs as usize)?;
        if !(0.0..1.0).contains(&self.smoothing_alpha) {
            return Err(ConfigError::field("smoothing_alpha", "must lie in [0, 1)"));
        }
        if let Some(w) = self.update_window {
            positive("update_window", w)?;
        }
        if !(0.0..1.0).contains(&self.baseline_momentum) {
            return Err(ConfigError::field("baseline_momentum", "must lie in [0, 1)"));
        }
        self.sd.validate("sd")?;
        self.rv.validate("rv")?;
        self.embed.validate()?;
        Ok(())
    }
}
