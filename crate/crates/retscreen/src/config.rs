//! Run configuration: a single strict TOML file per run.
//!
//! Two presets expand to the executed configurations (`baseline` and
//! `vgg16`); any field can then be overridden. Unknown keys are errors so a
//! typo can never silently fall back to a preset value.
//!
//! ```
//! use retscreen::config::parse_config_str;
//!
//! let cfg = parse_config_str("preset = \"baseline\"\nepochs = 2\n").unwrap();
//! assert_eq!(cfg.epochs, 2);
//! assert_eq!(cfg.learning_rate, 0.001); // untouched preset value
//!
//! let err = parse_config_str("preset = \"baseline\"\nepcohs = 2\n").unwrap_err();
//! assert!(err.to_string().contains("epcohs")); // typos are named, not ignored
//! ```

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::model::ModelName;
use crate::preprocess::AugmentConfig;
use crate::trainer::{LossKind, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown preset `{0}` (expected `baseline` or `vgg16`)")]
    UnknownPreset(String),
    #[error("flip_probability {0} outside [0,1]")]
    BadFlipProbability(f64),
}

/// Complete description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ModelName,
    pub image_size: usize,
    pub augment: AugmentConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    pub use_class_weights: bool,
    pub seed: u64,
    pub weights: Option<PathBuf>,
}

impl ExperimentConfig {
    /// 64x64, no augmentation, 10 epochs, binary cross-entropy, no class
    /// weights.
    pub fn baseline(seed: u64) -> Self {
        Self {
            experiment: ModelName::BaselineCnn,
            image_size: 64,
            augment: AugmentConfig::off(),
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.001,
            loss: LossKind::BinaryCrossEntropy,
            use_class_weights: false,
            seed,
            weights: None,
        }
    }

    /// 254x254, flips only, 5 epochs, lr 0.01, categorical cross-entropy,
    /// class weights on.
    pub fn vgg16(seed: u64) -> Self {
        Self {
            experiment: ModelName::Vgg16Transfer,
            image_size: 254,
            augment: AugmentConfig::flips(),
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.01,
            loss: LossKind::CategoricalCrossEntropy,
            use_class_weights: true,
            seed,
            weights: None,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            experiment: self.experiment,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            loss: self.loss,
            use_class_weights: self.use_class_weights,
            seed: self.seed,
        }
    }

    /// Serialize for the run directory's `config.snapshot`.
    pub fn snapshot(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// The raw TOML schema: a preset plus optional overrides. Strict keys.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: String,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    use_class_weights: Option<bool>,
    seed: Option<u64>,
    weights: Option<PathBuf>,
    horizontal_flip: Option<bool>,
    vertical_flip: Option<bool>,
    flip_probability: Option<f64>,
    rotation: Option<bool>,
    zoom: Option<bool>,
    brightness: Option<bool>,
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut cfg = match raw.preset.as_str() {
        "baseline" => ExperimentConfig::baseline(0),
        "vgg16" => ExperimentConfig::vgg16(0),
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    };
    if let Some(v) = raw.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = raw.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = raw.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = raw.use_class_weights {
        cfg.use_class_weights = v;
    }
    if let Some(v) = raw.seed {
        cfg.seed = v;
    }
    if raw.weights.is_some() {
        cfg.weights = raw.weights;
    }
    if let Some(v) = raw.horizontal_flip {
        cfg.augment.horizontal_flip = v;
    }
    if let Some(v) = raw.vertical_flip {
        cfg.augment.vertical_flip = v;
    }
    if let Some(v) = raw.flip_probability {
        if !(0.0..=1.0).contains(&v) {
            return Err(ConfigError::BadFlipProbability(v));
        }
        cfg.augment.flip_probability = v;
    }
    if let Some(v) = raw.rotation {
        cfg.augment.rotation = v;
    }
    if let Some(v) = raw.zoom {
        cfg.augment.zoom = v;
    }
    if let Some(v) = raw.brightness {
        cfg.augment.brightness = v;
    }
    Ok(cfg)
}
