//! Experiment configuration (JSON). Every field has a desk-scale default;
//! unknown keys anywhere in the document are rejected.

use std::path::Path;

use prseg_core::DecoderConfig;
use serde::{Deserialize, Serialize};

use crate::data::{ShapeFamily, SyntheticTask};
use crate::optim::SgdConfig;
use crate::HarnessError;

/// Overrides [`ExperimentConfig::seed`] when set.
pub const SEED_ENV: &str = "PRSEG_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub family: ShapeFamily,
    pub image_size: (usize, usize),
    pub noise_std: f64,
    pub tile: usize,
    pub train_images: usize,
    pub eval_images: usize,
    /// Data seed, independent of the training seed so that seed sweeps
    /// share one task.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            family: ShapeFamily::Stripes,
            image_size: (64, 64),
            noise_std: 0.05,
            tile: 32,
            train_images: 64,
            eval_images: 16,
            seed: 1234,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
    /// Steps between metrics records.
    pub log_every: usize,
    /// Steps between evaluations; 0 evaluates only after the last step.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        TrainConfig {
            steps: 1000,
            batch_size: 4,
            lr: 0.05,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            power: sgd.power,
            log_every: 25,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            power: self.power,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Seeds parameter init, sampling noise and batch order.
    pub seed: u64,
    pub data: DataConfig,
    pub model: DecoderConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            data: DataConfig::default(),
            model: DecoderConfig {
                dim: 32,
                num_classes: 4,
                ..DecoderConfig::default()
            },
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let mut unknown = Vec::new();
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_ignored::deserialize(&mut de, |path| unknown.push(path.to_string()))?;
        de.end()?;
        if !unknown.is_empty() {
            return Err(HarnessError::UnknownKeys(unknown));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read, apply the [`SEED_ENV`] override, validate.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<(), HarnessError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn task(&self, train: bool) -> SyntheticTask {
        SyntheticTask {
            // eval images come from a disjoint stream of the same generator
            seed: if train { self.data.seed } else { self.data.seed ^ 0x5eed_e7a1 },
            num_images: if train { self.data.train_images } else { self.data.eval_images },
            image_size: self.data.image_size,
            num_classes: self.model.num_classes,
            shape_family: self.data.family,
            noise_std: self.data.noise_std,
            tile: self.data.tile,
        }
    }

    /// Catches every size problem before any training happens.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.model.validate()?;
        self.task(true).validate()?;
        let t = &self.train;
        if t.steps == 0 || t.batch_size == 0 || t.log_every == 0 {
            return Err(HarnessError::Config("train.steps, train.batch_size and train.log_every must be positive".into()));
        }
        if self.data.train_images == 0 || self.data.eval_images == 0 {
            return Err(HarnessError::Config("data.train_images and data.eval_images must be positive".into()));
        }
        if !(t.lr > 0.0) || !(t.momentum >= 0.0) || !(t.weight_decay >= 0.0) || !(t.power >= 0.0) {
            return Err(HarnessError::Config("learning rate must be positive; momentum, decay and power non-negative".into()));
        }
        let (h, w) = self.data.image_size;
        let g = self.model.group_size;
        let (stride, coarsest) = if self.model.scales == 4 { (32, 32) } else { (8, 8) };
        if h % stride != 0 || w % stride != 0 {
            return Err(HarnessError::Config(format!(
                "image size {h}x{w} must be divisible by {stride} for {} scale(s)",
                self.model.scales
            )));
        }
        // every decoder feature map must tile into G_s x G_s patches
        let (fh, fw) = (h / coarsest, w / coarsest);
        if fh % g != 0 || fw % g != 0 {
            return Err(HarnessError::Config(format!(
                "group_size {g} does not divide the {fh}x{fw} feature map of a {h}x{w} image"
            )));
        }
        Ok(())
    }
}
