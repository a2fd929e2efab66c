use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::MinibatchPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    None,
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplaySource {
    Original,
    Generated,
    Random,
}

/// LwF knobs: loss mix and softmax temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LwfParams {
    pub alpha: f64,
    pub temperature: f64,
}

impl LwfParams {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::BadTemperature(self.temperature));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "LwF alpha must be in [0,1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Synaptic-intelligence knobs (feature extractor only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiParams {
    pub lambda: f64,
    pub clip: f64,
    pub multiplier: f64,
}

impl SiParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.clip <= 0.0 || self.multiplier < 0.0 {
            return Err(Error::Config(format!(
                "SI params must satisfy lambda >= 0, clip > 0, multiplier >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StrategyKind {
    /// Plain fine-tuning; replay is its only protection.
    Er,
    /// Distillation against the pre-experience model on past classes.
    Lwf(LwfParams),
    /// CWR head management; SI protects features only when training
    /// without replay.
    Ar1 {
        #[serde(default)]
        si: Option<SiParams>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenOptimizerKind {
    Adaptive,
    Sgd,
}

/// Generator training block; present only when a generator runs alongside
/// the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: GenOptimizerKind,
    /// Replay rows per generator minibatch; defaults to the classifier plan.
    #[serde(default)]
    pub replay_per_batch: Option<usize>,
}

/// Fully resolved per-run strategy description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: StrategyKind,
    pub replay_mode: ReplayMode,
    pub replay_source: ReplaySource,
    pub memory_capacity: usize,
    pub plan: MinibatchPlan,
    pub epochs: usize,
    pub first_epochs: usize,
    pub lr_phi: f64,
    pub lr_psi: f64,
    pub first_lr_phi: f64,
    pub first_lr_psi: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub freeze_features_after_first: bool,
    pub lr_schedule_enabled: bool,
    #[serde(default)]
    pub generator: Option<GenTrainConfig>,
}

impl StrategyConfig {
    /// Field-presence invariants: LwF fields iff LwF; SI iff AR1 without
    /// replay; a generator iff replay data is generated.
    pub fn validate(&self) -> Result<()> {
        match &self.strategy {
            StrategyKind::Lwf(p) => p.validate()?,
            StrategyKind::Ar1 { si } => {
                if let Some(p) = si {
                    p.validate()?;
                    if self.replay_mode != ReplayMode::None {
                        return Err(Error::Config(
                            "SI applies only to AR1 without replay".to_string(),
                        ));
                    }
                }
            }
            StrategyKind::Er => {}
        }
        if self.replay_mode != ReplayMode::None {
            if self.memory_capacity == 0 {
                return Err(Error::Config(
                    "replay requested with zero memory capacity".to_string(),
                ));
            }
            if self.plan.replay_per_batch == 0 {
                return Err(Error::Config(
                    "replay requested with zero replay rows per minibatch".to_string(),
                ));
            }
            if self.replay_source == ReplaySource::Generated && self.generator.is_none() {
                return Err(Error::Config(
                    "generated replay needs a generator block".to_string(),
                ));
            }
        } else if self.plan.replay_per_batch != 0 {
            return Err(Error::Config(
                "replay disabled but the minibatch plan reserves replay rows".to_string(),
            ));
        }
        if self.epochs == 0 || self.first_epochs == 0 {
            return Err(Error::Config("epochs must be positive".to_string()));
        }
        for (name, lr) in [
            ("lr_phi", self.lr_phi),
            ("lr_psi", self.lr_psi),
            ("first_lr_phi", self.first_lr_phi),
            ("first_lr_psi", self.first_lr_psi),
        ] {
            if lr <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if let Some(g) = &self.generator {
            if g.epochs == 0 || g.lr <= 0.0 {
                return Err(Error::Config(
                    "generator block needs positive epochs and lr".to_string(),
                ));
            }
        }
        Ok(())
    }

    /// True when training steps apply the class-level gradient mask:
    /// negative replay under ER/LwF. AR1 protects the head in
    /// consolidation instead.
    pub fn masking_active(&self) -> bool {
        self.replay_mode == ReplayMode::Negative
            && !matches!(self.strategy, StrategyKind::Ar1 { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> StrategyConfig {
        StrategyConfig {
            strategy: StrategyKind::Er,
            replay_mode: ReplayMode::None,
            replay_source: ReplaySource::Original,
            memory_capacity: 0,
            plan: MinibatchPlan::new(32, 0).unwrap(),
            epochs: 2,
            first_epochs: 2,
            lr_phi: 0.01,
            lr_psi: 0.01,
            first_lr_phi: 0.01,
            first_lr_psi: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            freeze_features_after_first: false,
            lr_schedule_enabled: false,
            generator: None,
        }
    }

    #[test]
    fn si_with_replay_rejected() {
        let mut cfg = base();
        cfg.strategy = StrategyKind::Ar1 {
            si: Some(SiParams {
                lambda: 1.0,
                clip: 1e-3,
                multiplier: 1.0,
            }),
        };
        cfg.replay_mode = ReplayMode::Positive;
        cfg.replay_source = ReplaySource::Original;
        cfg.memory_capacity = 10;
        cfg.plan = MinibatchPlan::new(32, 8).unwrap();
        assert!(cfg.validate().is_err());
        cfg.replay_mode = ReplayMode::None;
        cfg.plan = MinibatchPlan::new(32, 0).unwrap();
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn generated_replay_requires_generator() {
        let mut cfg = base();
        cfg.replay_mode = ReplayMode::Negative;
        cfg.replay_source = ReplaySource::Generated;
        cfg.memory_capacity = 10;
        cfg.plan = MinibatchPlan::new(32, 8).unwrap();
        assert!(cfg.validate().is_err());
        cfg.generator = Some(GenTrainConfig {
            epochs: 1,
            lr: 0.001,
            optimizer: GenOptimizerKind::Adaptive,
            replay_per_batch: None,
        });
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn masking_only_for_non_ar1_negative() {
        let mut cfg = base();
        cfg.replay_mode = ReplayMode::Negative;
        cfg.replay_source = ReplaySource::Original;
        cfg.memory_capacity = 10;
        cfg.plan = MinibatchPlan::new(32, 8).unwrap();
        assert!(cfg.masking_active());
        cfg.strategy = StrategyKind::Ar1 { si: None };
        assert!(!cfg.masking_active());
        cfg.replay_mode = ReplayMode::Positive;
        assert!(!cfg.masking_active());
    }

    #[test]
    fn bad_lwf_temperature_rejected() {
        let mut cfg = base();
        cfg.strategy = StrategyKind::Lwf(LwfParams {
            alpha: 0.1,
            temperature: 0.0,
        });
        assert!(matches!(cfg.validate(), Err(Error::BadTemperature(_))));
    }
}
