//! Training configuration (JSON; unknown keys rejected).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ColorMode, ModelConfig, Preset};

/// One curriculum stage: crops of `spatial` pixels for `epochs` epochs at
/// learning rate `lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub spatial: usize,
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub scale: bool,
    pub crop: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { hflip: true, scale: true, crop: true }
    }
}

/// Which network to train: a named preset or a full custom config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkSpec {
    Preset(Preset),
    Custom(ModelConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub network: NetworkSpec,
    /// Stages must be ordered by increasing spatial size.
    pub stages: Vec<StageConfig>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Directory of STF1 video cubes.
    pub dataset: PathBuf,
    #[serde(default)]
    pub augment: AugmentConfig,
    /// Compression rate B.
    #[serde(default = "default_compression")]
    pub compression: usize,
    #[serde(default)]
    pub color: bool,
    /// Measurement noise level during training encodes.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Draw a fresh random mask per batch instead of one fixed mask.
    #[serde(default)]
    pub random_masks: bool,
    /// Evaluate the final checkpoint on the dataset when done.
    #[serde(default = "default_true")]
    pub eval_after: bool,
}

fn default_batch() -> usize {
    1
}

fn default_compression() -> usize {
    8
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn model_config(&self) -> Result<ModelConfig> {
        let color = if self.color { ColorMode::Color } else { ColorMode::Gray };
        let config = match &self.network {
            NetworkSpec::Preset(p) => ModelConfig::preset(*p, color, self.compression),
            NetworkSpec::Custom(c) => {
                let mut c = c.clone();
                c.compression = self.compression;
                c
            }
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("at least one training stage is required".into()));
        }
        for stage in &self.stages {
            if stage.lr <= 0.0 {
                return Err(Error::Config(format!("stage lr must be > 0, got {}", stage.lr)));
            }
            if stage.spatial == 0 || stage.spatial % 2 != 0 {
                return Err(Error::Config(format!("stage spatial size must be even, got {}", stage.spatial)));
            }
        }
        if self.stages.windows(2).any(|w| w[0].spatial > w[1].spatial) {
            return Err(Error::Config("stages must be ordered by increasing spatial size".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        self.model_config()?;
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Stable hash of the canonical JSON encoding.
    pub fn hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&canonical);
        Ok(format!("{digest:x}"))
    }
}
