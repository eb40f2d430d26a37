use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::SyntheticTask;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::LossConfig;

/// Optimization and evaluation settings of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub train_volumes: usize,
    pub val_volumes: usize,
    pub peak_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// Cosine length after warm-up; `None` anneals until the last step.
    pub t_max: Option<usize>,
    pub eval_every: usize,
    /// Mean foreground Dice on the training volumes that counts as fitted.
    pub target_dice: f64,
    pub stop_at_target: bool,
    pub augment: bool,
    pub augment_noise_std: f64,
    /// Parameters whose names start with any of these are not updated.
    pub freeze: Vec<String>,
    /// Seeds stochastic depth and augmentation.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            train_volumes: 4,
            val_volumes: 2,
            peak_lr: 1e-2,
            min_lr: 1e-9,
            weight_decay: 1e-5,
            warmup_steps: 5,
            t_max: None,
            eval_every: 10,
            target_dice: 0.95,
            stop_at_target: true,
            augment: false,
            augment_noise_std: 0.05,
            freeze: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.steps == 0 {
            errs.push("train.steps: must be positive".to_string());
        }
        if self.train_volumes == 0 {
            errs.push("train.train_volumes: must be positive".to_string());
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            errs.push(format!("train.peak_lr: {} must be finite and > 0", self.peak_lr));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.peak_lr) {
            errs.push(format!("train.min_lr: {} must lie in [0, peak_lr]", self.min_lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            errs.push(format!("train.weight_decay: {} must be finite and >= 0", self.weight_decay));
        }
        if self.eval_every == 0 {
            errs.push("train.eval_every: must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.target_dice) {
            errs.push(format!("train.target_dice: {} outside [0, 1]", self.target_dice));
        }
        if !(self.augment_noise_std >= 0.0 && self.augment_noise_std.is_finite()) {
            errs.push(format!("train.augment_noise_std: {} must be finite and >= 0", self.augment_noise_std));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn cosine_steps(&self) -> usize {
        self.t_max.unwrap_or(self.steps.saturating_sub(self.warmup_steps).max(1))
    }
}

/// Everything a run needs, loadable from one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub task: SyntheticTask,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                drop_path_max: 0.0,
                ..ModelConfig::tiny()
            },
            loss: LossConfig::default(),
            task: SyntheticTask::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Validates every section, collecting all violations.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let sections = [
            self.model.validate(),
            self.loss.validate(),
            self.task.validate(),
            self.train.validate(),
        ];
        for r in sections {
            match r {
                Err(Error::Config(e)) => errs.extend(e),
                Err(e) => return Err(e),
                Ok(()) => {}
            }
        }
        if self.task.size % crate::model::INPUT_MULTIPLE != 0 {
            errs.push(format!(
                "task.size: {} must be a multiple of {}",
                self.task.size,
                crate::model::INPUT_MULTIPLE
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Sets every seed (model init, data, training noise) at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.task.seed = seed;
        self.train.seed = seed;
    }

    /// Parses a run description. Fields absent from `text` keep the values of
    /// [`RunConfig::default`], including inside partially specified sections.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut merged = serde_json::to_value(Self::default())?;
        merge(&mut merged, serde_json::from_str(text)?);
        let cfg: Self = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(base), serde_json::Value::Object(patch)) => {
            for (key, value) in patch {
                match base.get_mut(&key) {
                    Some(slot) => merge(slot, value),
                    None => {
                        base.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}
