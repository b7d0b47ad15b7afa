//! Key-value run configuration. Every key is optional; missing keys take the
//! defaults below. See `causalwatch.example.toml` at the repository root for
//! an annotated file listing every key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discovery::DiscoveryConfig;
use crate::gcn::TrainConfig;
use crate::incremental::IncrementalConfig;
use crate::trigger::TriggerConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Samples per window.
    pub window_length: usize,
    /// z-score features with statistics of the training windows.
    pub standardize: bool,
    /// Name of the 0/1 label column in input CSV files.
    pub label_column: String,
    /// Seconds between samples.
    pub sample_period: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            window_length: 200,
            standardize: true,
            label_column: "label".into(),
            sample_period: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Leading fraction of windows used for training.
    pub train_fraction: f64,
    /// Attack iff the classifier probability reaches this.
    pub classify_threshold: f64,
    /// Baseline flags a window when a feature's window mean leaves this many
    /// standard deviations of the training-normal window means.
    pub baseline_sigma: f64,
    /// Worker threads for per-window discovery; 0 uses all cores.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train_fraction: 0.5,
            classify_threshold: 0.5,
            baseline_sigma: 3.0,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub stream: StreamConfig,
    pub discovery: DiscoveryConfig,
    pub trigger: TriggerConfig,
    pub incremental: IncrementalConfig,
    pub gcn: TrainConfig,
    pub pipeline: PipelineConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        if self.stream.window_length < 2 {
            return Err(Error::Config("stream.window_length must be at least 2".into()));
        }
        if !(self.stream.sample_period > 0.0) {
            return Err(Error::Config("stream.sample_period must be positive".into()));
        }
        self.discovery.validate().map_err(|e| Error::Config(format!("discovery: {e}")))?;
        self.trigger.validate().map_err(|e| Error::Config(format!("trigger: {e}")))?;
        self.incremental.validate()?;
        self.gcn.validate()?;
        let p = &self.pipeline;
        if !(p.train_fraction > 0.0 && p.train_fraction < 1.0) {
            return Err(Error::Config("pipeline.train_fraction must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&p.classify_threshold) {
            return Err(Error::Config("pipeline.classify_threshold must be in [0, 1]".into()));
        }
        if !(p.baseline_sigma > 0.0) {
            return Err(Error::Config("pipeline.baseline_sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
