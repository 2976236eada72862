//! Run configuration: one JSON document covering simulation, model, and
//! training; every field has the desk-scale default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::model::{BeamformerNetConfig, EstimatorConfig};
use crate::sim::corpus::CorpusRecipe;

fn default_chunk_seconds() -> f64 {
    4.0
}
fn default_batch_size() -> usize {
    8
}
fn default_lr() -> f64 {
    1e-4
}
fn default_clip_norm() -> f64 {
    10.0
}
fn default_max_epochs() -> usize {
    20
}
fn default_patience() -> usize {
    5
}
fn default_precision() -> String {
    "double".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_chunk_seconds")]
    pub chunk_seconds: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    /// Numeric precision of the network; only "double" is implemented.
    #[serde(default = "default_precision")]
    pub precision: String,
    /// Optimizer steps per epoch; defaults to ceil(n_utts / batch_size).
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
    /// Hard cap on total optimizer steps across all epochs.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Cap on validation utterances per epoch.
    #[serde(default)]
    pub max_val_utts: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_seconds <= 0.0
            || self.batch_size == 0
            || self.lr < 0.0
            || self.clip_norm <= 0.0
            || self.max_epochs == 0
        {
            return Err(Error::config("train config fields must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.precision != "double" {
            return Err(Error::config(format!(
                "precision `{}` unsupported; this build computes in double precision",
                self.precision
            )));
        }
        Ok(())
    }
}

/// Everything a run needs, with the desk-scale profile as the default:
/// M=4, up to 2 speakers, 16 kHz, fc1=256, gru=128, d_k=64.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RunConfig {
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub recipe: CorpusRecipe,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub beamformer: BeamformerNetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Model initialization seed.
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn mics(&self) -> usize {
        self.recipe.array_x.len()
    }

    /// Speaker slots the model carries: the recipe's maximum.
    pub fn speaker_slots(&self) -> usize {
        self.recipe.speakers[1]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.recipe.validate()?;
        self.train.validate()?;
        Ok(())
    }
}
