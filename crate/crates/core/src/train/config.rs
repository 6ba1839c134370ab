use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DEFAULT_PER_AU_CAP, DEFAULT_ZERO_FRAMES};
use crate::error::{Error, Result};
use crate::labels::LabelMode;
use crate::model::{LossWeights, SkipPosition};

pub const DEFAULT_LR_AE: f64 = 1e-3;
pub const DEFAULT_LR_DISC: f64 = 1e-4;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_EPOCHS: usize = 40;

/// Everything a training run depends on. Serialized as JSON.
///
/// Missing hyperparameters take their default values; `manifest` and
/// `output_dir` are required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub skip_position: SkipPosition,
    #[serde(default = "default_label_mode")]
    pub label_mode: LabelMode,
    #[serde(default = "default_lr_ae")]
    pub lr_ae: f64,
    #[serde(default = "default_lr_disc")]
    pub lr_disc: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    /// Stop after this many optimizer steps even mid-epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    /// Subjects of the training fold; all subjects when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subjects: Option<Vec<String>>,
    #[serde(default = "default_per_au_cap")]
    pub per_au_cap: usize,
    #[serde(default = "default_zero_frames")]
    pub zero_frames: usize,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

fn default_label_mode() -> LabelMode {
    LabelMode::Au
}
fn default_lr_ae() -> f64 {
    DEFAULT_LR_AE
}
fn default_lr_disc() -> f64 {
    DEFAULT_LR_DISC
}
fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_alpha() -> f64 {
    LossWeights::default().alpha
}
fn default_beta1() -> f64 {
    LossWeights::default().beta1
}
fn default_beta2() -> f64 {
    LossWeights::default().beta2
}
fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}
fn default_per_au_cap() -> usize {
    DEFAULT_PER_AU_CAP
}
fn default_zero_frames() -> usize {
    DEFAULT_ZERO_FRAMES
}
fn default_checkpoint_every() -> usize {
    1
}

impl TrainConfig {
    /// Default hyperparameters for a corpus and output directory.
    pub fn new(manifest: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            skip_position: SkipPosition::default(),
            label_mode: default_label_mode(),
            lr_ae: DEFAULT_LR_AE,
            lr_disc: DEFAULT_LR_DISC,
            batch_size: DEFAULT_BATCH_SIZE,
            alpha: default_alpha(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            manifest: manifest.into(),
            output_dir: output_dir.into(),
            max_steps: None,
            train_subjects: None,
            per_au_cap: DEFAULT_PER_AU_CAP,
            zero_frames: DEFAULT_ZERO_FRAMES,
            checkpoint_every: 1,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [("lr_ae", self.lr_ae), ("lr_disc", self.lr_disc)];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        let weights = [("alpha", self.alpha), ("beta1", self.beta1), ("beta2", self.beta2)];
        for (name, v) in weights {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. Relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if config.manifest.is_relative() {
            config.manifest = base.join(&config.manifest);
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
