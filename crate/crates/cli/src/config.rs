//! TOML run configuration: the model hyperparameters plus the input geometry
//! the model expects. The literal string `default` stands in for a config
//! file and resolves to the built-in settings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rppg_core::model::ModelConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub input: InputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub schedule: Vec<u32>,
    pub channels: usize,
    pub heads: usize,
    pub topk: Option<usize>,
    pub partition_coefficient: u32,
    pub tdc_theta: f64,
    pub ff_expansion: usize,
    pub stem_channels: usize,
    pub head_hidden: usize,
    pub stem_alpha: f64,
    pub stem_beta: f64,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            schedule: m.schedule,
            channels: m.channels,
            heads: m.heads,
            topk: m.topk,
            partition_coefficient: m.partition_coefficient,
            tdc_theta: m.tdc_theta,
            ff_expansion: m.ff_expansion,
            stem_channels: m.stem_channels,
            head_hidden: m.head_hidden,
            stem_alpha: m.stem_alpha,
            stem_beta: m.stem_beta,
            seed: m.seed,
        }
    }
}

/// Clip geometry the model runs at; `forward` resizes frames to match.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
}

impl Default for InputSection {
    fn default() -> Self {
        InputSection { frames: 160, height: 128, width: 128, fps: 30.0 }
    }
}

impl RunConfig {
    pub fn load(arg: &str) -> Result<RunConfig, CliError> {
        if arg == "default" {
            return Ok(RunConfig::default());
        }
        let text = std::fs::read_to_string(arg)
            .map_err(|e| CliError::new("config", format!("cannot read {arg}: {e}")))?;
        toml::from_str(&text).map_err(|e| CliError::new("config", format!("{arg}: {e}")))
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            schedule: m.schedule.clone(),
            channels: m.channels,
            heads: m.heads,
            topk: m.topk,
            partition_coefficient: m.partition_coefficient,
            tdc_theta: m.tdc_theta,
            ff_expansion: m.ff_expansion,
            stem_channels: m.stem_channels,
            head_hidden: m.head_hidden,
            stem_alpha: m.stem_alpha,
            stem_beta: m.stem_beta,
            seed: m.seed,
        }
    }

    /// Hash of the resolved settings, so equal effective configs share a
    /// fingerprint no matter where they were loaded from.
    pub fn sha256(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        hash_str(&canonical)
    }
}

pub fn hash_str(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}
