use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::dsp::{Compression, StftConfig};
use crate::error::{Error, Result};
use crate::metrics::SsnrConfig;
use crate::specmask::MaskConfig;

/// Toy MAE settings used by `train-toy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub embed_dim: usize,
    pub patch_bins: usize,
    pub patch_frames: usize,
    /// Patches drawn from the clip to form the fixed training batch.
    pub max_patches: usize,
    pub init_seed: u64,
    /// Rescale the batch to unit target RMS before training.
    pub normalize: bool,
    /// Reference optimizer settings of the full-scale model. Recorded only;
    /// the toy loop runs plain gradient descent.
    pub reference_optimizer: ReferenceOptimizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceOptimizer {
    pub name: String,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: String,
}

impl Default for ReferenceOptimizer {
    fn default() -> Self {
        Self {
            name: "adamw".into(),
            lr: 1e-4,
            weight_decay: 0.05,
            schedule: "cosine".into(),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.1,
            embed_dim: 8,
            patch_bins: 4,
            patch_frames: 4,
            max_patches: 8,
            init_seed: 0,
            normalize: true,
            reference_optimizer: ReferenceOptimizer::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub sample_rate_hz: u32,
    pub clip_seconds: f64,
    pub compression: Compression,
    pub output_dir: PathBuf,
    pub stft: StftConfig,
    pub augment: AugmentConfig,
    pub specmask: MaskConfig,
    pub ssnr: SsnrConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_rate_hz: 16_000,
            clip_seconds: 4.0,
            compression: Compression::Log1p,
            output_dir: PathBuf::from("out"),
            stft: StftConfig::canonical(),
            augment: AugmentConfig::default(),
            specmask: MaskConfig::default(),
            ssnr: SsnrConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn clip_len(&self) -> usize {
        (self.clip_seconds * self.sample_rate_hz as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample_rate_hz must be positive".into()));
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) || self.clip_len() == 0 {
            return Err(Error::Config(format!(
                "clip_seconds {} must be positive",
                self.clip_seconds
            )));
        }
        self.stft.validate().map_err(|e| Error::Config(format!("stft: {e}")))?;
        if !self.stft.is_cola() {
            return Err(Error::Config("stft window and hop do not satisfy COLA".into()));
        }
        if self.clip_len() < self.stft.window_len_samples {
            return Err(Error::Config("clip shorter than one STFT window".into()));
        }
        self.augment.validate()?;
        self.specmask.validate()?;
        self.ssnr.validate().map_err(|e| Error::Config(format!("ssnr: {e}")))?;
        let t = &self.train;
        if t.embed_dim == 0 || t.patch_bins == 0 || t.patch_frames == 0 || t.max_patches == 0 || !(t.lr > 0.0) {
            return Err(Error::Config("train dimensions and lr must be positive".into()));
        }
        Ok(())
    }
}
