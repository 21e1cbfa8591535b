use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::separators::{SeparatorConfig, SeparatorRegistry};
use crate::train::optim::OptimizerRegistry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: String,
    pub learning_rate: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { method: "adam".into(), learning_rate: 1e-3, clip_norm: 5.0 }
    }
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub sample_rate: u32,
    /// Training segment length; evaluation always uses whole utterances.
    pub segment_seconds: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub checkpoint_interval: usize,
    pub frontend: FrontendConfig,
    pub separator: SeparatorConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_rate: crate::audio::DEFAULT_SAMPLE_RATE,
            segment_seconds: 4.0,
            batch_size: 1,
            max_steps: 10_000,
            checkpoint_interval: 1_000,
            frontend: FrontendConfig::default(),
            separator: SeparatorConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sample_rate", self.sample_rate as f64),
            ("segment_seconds", self.segment_seconds),
            ("batch_size", self.batch_size as f64),
            ("max_steps", self.max_steps as f64),
            ("checkpoint_interval", self.checkpoint_interval as f64),
            ("optimizer.learning_rate", self.optimizer.learning_rate),
            ("optimizer.clip_norm", self.optimizer.clip_norm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.segment_samples() < self.frontend.win_len {
            return Err(Error::Config("segment is shorter than one encoder window".into()));
        }
        self.frontend.validate()?;
        OptimizerRegistry::builtin().check(&self.optimizer.method)?;
        SeparatorRegistry::builtin().build(&self.separator, self.frontend.num_basis).map(|_| ())
    }

    pub fn segment_samples(&self) -> usize {
        (self.segment_seconds * self.sample_rate as f64).round() as usize
    }
}
