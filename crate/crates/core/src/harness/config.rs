use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model::ModelConfig;
use crate::optim::AdamConfig;

/// Everything a training run depends on besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::full(),
            loss: LossKind::Mse,
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 500,
            seed: 0,
            checkpoint_interval: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// The `[train]` section of a config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainSection {
    loss: LossKind,
    learning_rate: f64,
    batch_size: usize,
    epochs: usize,
    seed: u64,
    checkpoint_interval: usize,
    adam: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            loss: d.loss,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs: d.epochs,
            seed: d.seed,
            checkpoint_interval: d.checkpoint_interval,
            adam: d.adam,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Builds a model config from a `[model]` table. An optional `preset` key
/// (full, desk, tiny) supplies the defaults the other keys override.
pub fn model_from_table(mut table: Table) -> Result<ModelConfig> {
    let base = match table.remove("preset") {
        None => ModelConfig::full(),
        Some(Value::String(name)) => ModelConfig::preset(&name)?,
        Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
    };
    let mut merged = Table::try_from(&base).map_err(config_err)?;
    merged.extend(table);
    let cfg: ModelConfig = merged.try_into().map_err(config_err)?;
    cfg.validate()?;
    Ok(cfg)
}

impl TrainConfig {
    /// Desk-scale defaults: the desk model, batch 16, 50 epochs. The step
    /// size is 1e-3; at 1e-4 the small model is still far from converged
    /// after 50 epochs.
    pub fn desk() -> Self {
        TrainConfig {
            model: ModelConfig::desk(),
            learning_rate: 1e-3,
            epochs: 50,
            ..Self::default()
        }
    }

    /// Training defaults matching a model preset: `desk` gets
    /// [`TrainConfig::desk`], the others the full protocol.
    pub fn preset(name: &str) -> Result<Self> {
        let model = ModelConfig::preset(name)?;
        Ok(if name == "desk" {
            Self::desk()
        } else {
            TrainConfig { model, ..Self::default() }
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.epsilon.is_nan() || a.epsilon <= 0.0 {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        Ok(())
    }

    /// Parses a config file with `[model]` and `[train]` sections; missing
    /// keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut doc: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let model = match doc.remove("model") {
            None => ModelConfig::full(),
            Some(Value::Table(t)) => model_from_table(t)?,
            Some(_) => return Err(Error::Config("`model` must be a section".into())),
        };
        let train: TrainSection = match doc.remove("train") {
            None => TrainSection::default(),
            Some(v) => v.try_into().map_err(config_err)?,
        };
        if let Some(key) = doc.keys().next() {
            return Err(Error::Config(format!("unknown section `{key}` (expected [model] and [train])")));
        }
        let cfg = TrainConfig {
            model,
            loss: train.loss,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            seed: train.seed,
            checkpoint_interval: train.checkpoint_interval,
            adam: train.adam,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        let train = TrainSection {
            loss: self.loss,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            checkpoint_interval: self.checkpoint_interval,
            adam: self.adam,
        };
        let mut doc = Table::new();
        doc.insert("model".into(), Value::try_from(&self.model).expect("model config serializes"));
        doc.insert("train".into(), Value::try_from(&train).expect("train section serializes"));
        toml::to_string(&doc).expect("config serializes")
    }
}
