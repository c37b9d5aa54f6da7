//! Every hyperparameter of a run, serialized into each checkpoint.

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::editor::{EditorConfig, LossConfig, NoiseConfig, PRETRAIN_LR};
use crate::systems::{ConcurrentConfig, DecodeConfig, JoinMode, MergeRule, Mode};
use crate::train::OptimConfig;

/// Fine-tuning length used for full-corpus runs.
pub const FULL_SCALE_FINE_TUNE_STEPS: usize = 25_000;
/// Fine-tuning length used for desk-scale runs.
pub const DESK_FINE_TUNE_STEPS: usize = 2_000;
/// Fine-tuning learning rate of the concurrent system, whose encoder has
/// no supervised pretraining; the modular system keeps the stage default.
pub const CONCURRENT_FINE_TUNE_LR: f64 = 3e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlmSettings {
    pub steps: usize,
    pub mask_prob: f64,
    pub optim: OptimConfig,
}

impl Default for MlmSettings {
    fn default() -> Self {
        Self {
            steps: 1000,
            mask_prob: 0.15,
            optim: OptimConfig::default(),
        }
    }
}

/// A training stage measured in epochs unless `steps` overrides it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub epochs: usize,
    pub steps: Option<usize>,
    pub optim: OptimConfig,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            steps: None,
            optim: OptimConfig::default(),
        }
    }
}

impl StageConfig {
    /// Minibatch count for a dataset of `n` examples.
    pub fn steps_for(&self, n: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * n.div_ceil(self.optim.batch.max(1)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub vocab_cap: usize,
    pub mode: Mode,
    pub join: JoinMode,
    pub merge: MergeRule,
    pub detector: DetectorConfig,
    pub editor: EditorConfig,
    pub concurrent: ConcurrentConfig,
    pub loss: LossConfig,
    pub noise: NoiseConfig,
    pub decode: DecodeConfig,
    pub mlm: MlmSettings,
    pub detector_training: StageConfig,
    pub pretraining: StageConfig,
    pub fine_tuning: StageConfig,
    pub concurrent_fine_tuning_lr: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab_cap: 5000,
            mode: Mode::Modular,
            join: JoinMode::Gate,
            merge: MergeRule::Replace,
            detector: DetectorConfig::default(),
            editor: EditorConfig::default(),
            concurrent: ConcurrentConfig::default(),
            loss: LossConfig::default(),
            noise: NoiseConfig::default(),
            decode: DecodeConfig::default(),
            mlm: MlmSettings::default(),
            detector_training: StageConfig::default(),
            pretraining: StageConfig {
                optim: OptimConfig {
                    lr: PRETRAIN_LR,
                    ..OptimConfig::default()
                },
                ..StageConfig::default()
            },
            fine_tuning: StageConfig {
                steps: Some(DESK_FINE_TUNE_STEPS),
                ..StageConfig::default()
            },
            concurrent_fine_tuning_lr: CONCURRENT_FINE_TUNE_LR,
        }
    }
}

impl RunConfig {
    /// Gives every stage a seed derived from the run seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.mlm.optim.seed = seed.wrapping_add(1);
        self.detector_training.optim.seed = seed.wrapping_add(2);
        self.pretraining.optim.seed = seed.wrapping_add(3);
        self.fine_tuning.optim.seed = seed.wrapping_add(4);
        self
    }

    /// Fine-tuning optimizer settings for `mode`.
    pub fn fine_tuning_optim(&self, mode: Mode) -> OptimConfig {
        match mode {
            Mode::Modular => self.fine_tuning.optim,
            Mode::Concurrent => OptimConfig {
                lr: self.concurrent_fine_tuning_lr,
                ..self.fine_tuning.optim
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_rejects_unknown_keys() {
        let cfg = RunConfig::default().with_seed(7);
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(RunConfig::from_json(r#"{"seed": 1, "learning_rate": 0.1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"editor": {"hidden": 8, "depth": 2}}"#).is_err());
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn epochs_become_steps() {
        let stage = StageConfig::default();
        assert_eq!(stage.steps_for(33), 4 * 3);
        let fixed = StageConfig {
            steps: Some(5),
            ..StageConfig::default()
        };
        assert_eq!(fixed.steps_for(1000), 5);
    }
}
