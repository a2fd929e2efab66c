use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    build_stream, load_dataset, synth_dataset, Dataset, Scenario, Split, Stream, StreamLayout,
    SynthSpec, TestProtocol,
};
use crate::error::{Error, Result};
use crate::harness::seedmix::{domain, mix};
use crate::replay::MinibatchPlan;
use crate::strategies::{
    GenOptimizerKind, GenTrainConfig, LwfParams, ReplayMode, ReplaySource, SiParams,
    StrategyConfig, StrategyKind,
};

fn default_true() -> bool {
    true
}

/// Where the train/test splits come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Synth {
        #[serde(flatten)]
        spec: SynthSpec,
        /// Mix the run seed into the sampling seed so every run draws its
        /// own dataset instance.
        #[serde(default = "default_true")]
        vary_per_seed: bool,
    },
    Files {
        train_path: String,
        test_path: String,
    },
}

/// Stream layout description; exactly one layout field must match the
/// scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamSpec {
    pub scenario: Scenario,
    #[serde(default)]
    pub nc_layout: Option<Vec<usize>>,
    #[serde(default)]
    pub ni_experiences: Option<usize>,
    #[serde(default)]
    pub nic_parts_per_class: Option<usize>,
    /// Class-order / chunk-order shuffle seed (mixed with the run seed).
    pub seed: u64,
}

impl StreamSpec {
    pub fn layout(&self) -> Result<StreamLayout> {
        match (
            self.scenario,
            &self.nc_layout,
            self.ni_experiences,
            self.nic_parts_per_class,
        ) {
            (Scenario::Nc, Some(sizes), None, None) => Ok(StreamLayout::Nc {
                classes_per_experience: sizes.clone(),
            }),
            (Scenario::Ni, None, Some(n), None) => Ok(StreamLayout::Ni { experiences: n }),
            (Scenario::Nic, None, None, Some(parts)) => Ok(StreamLayout::NicSingleClass {
                parts_per_class: parts,
            }),
            _ => Err(Error::Config(format!(
                "stream spec for scenario {} must set exactly its own layout field",
                self.scenario
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationSpec {
    pub protocols: Vec<TestProtocol>,
}

/// Shared architecture: classifier MLP widths and generator sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Hidden widths below the latent cut; the last is the cut width.
    pub hidden: Vec<usize>,
    /// Widths between the cut and the head (usually empty).
    #[serde(default)]
    pub post: Vec<usize>,
    pub gen_hidden: usize,
    pub z_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplaySpec {
    pub mode: ReplayMode,
    #[serde(default)]
    pub source: Option<ReplaySource>,
    #[serde(default)]
    pub capacity: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub batch_size: usize,
    #[serde(default)]
    pub replay_per_batch: usize,
    pub epochs: usize,
    #[serde(default)]
    pub first_epochs: Option<usize>,
    pub lr_phi: f64,
    pub lr_psi: f64,
    #[serde(default)]
    pub first_lr_phi: Option<f64>,
    #[serde(default)]
    pub first_lr_psi: Option<f64>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub freeze_features_after_first: bool,
    #[serde(default)]
    pub lr_schedule: bool,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "default_gen_optimizer")]
    pub optimizer: GenOptimizerKind,
    #[serde(default)]
    pub replay_per_batch: Option<usize>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_gen_optimizer() -> GenOptimizerKind {
    GenOptimizerKind::Adaptive
}

fn default_beta() -> f64 {
    0.1
}

fn default_eta() -> f64 {
    0.01
}

/// Strategy selector mirroring [`StrategyKind`] with flat TOML fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: String,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub si: Option<SiParams>,
}

impl StrategySpec {
    pub fn to_kind(&self) -> Result<StrategyKind> {
        match self.kind.as_str() {
            "er" => {
                if self.alpha.is_some() || self.temperature.is_some() || self.si.is_some() {
                    return Err(Error::Config(
                        "er takes no alpha/temperature/si fields".to_string(),
                    ));
                }
                Ok(StrategyKind::Er)
            }
            "lwf" => match (self.alpha, self.temperature) {
                (Some(alpha), Some(temperature)) if self.si.is_none() => {
                    Ok(StrategyKind::Lwf(LwfParams { alpha, temperature }))
                }
                _ => Err(Error::Config(
                    "lwf requires alpha and temperature (and no si)".to_string(),
                )),
            },
            "ar1" => {
                if self.alpha.is_some() || self.temperature.is_some() {
                    return Err(Error::Config("ar1 takes no LwF fields".to_string()));
                }
                Ok(StrategyKind::Ar1 { si: self.si })
            }
            other => Err(Error::Config(format!("unknown strategy kind '{other}'"))),
        }
    }
}

/// One named run variant inside a suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEntry {
    pub name: String,
    pub strategy: StrategySpec,
    pub replay: ReplaySpec,
    pub training: TrainingSpec,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
}

impl RunEntry {
    pub fn to_strategy_config(&self) -> Result<StrategyConfig> {
        let replay_source = match (self.replay.mode, self.replay.source) {
            (ReplayMode::None, _) => self.replay.source.unwrap_or(ReplaySource::Original),
            (_, Some(s)) => s,
            (_, None) => {
                return Err(Error::Config(format!(
                    "run '{}' enables replay without a source",
                    self.name
                )))
            }
        };
        let cfg = StrategyConfig {
            strategy: self.strategy.to_kind()?,
            replay_mode: self.replay.mode,
            replay_source,
            memory_capacity: self.replay.capacity,
            plan: MinibatchPlan::new(self.training.batch_size, self.training.replay_per_batch)?,
            epochs: self.training.epochs,
            first_epochs: self.training.first_epochs.unwrap_or(self.training.epochs),
            lr_phi: self.training.lr_phi,
            lr_psi: self.training.lr_psi,
            first_lr_phi: self.training.first_lr_phi.unwrap_or(self.training.lr_phi),
            first_lr_psi: self.training.first_lr_psi.unwrap_or(self.training.lr_psi),
            momentum: self.training.momentum,
            weight_decay: self.training.weight_decay,
            freeze_features_after_first: self.training.freeze_features_after_first,
            lr_schedule_enabled: self.training.lr_schedule,
            generator: self.generator.as_ref().map(|g| GenTrainConfig {
                epochs: g.epochs,
                lr: g.lr,
                optimizer: g.optimizer,
                replay_per_batch: g.replay_per_batch,
            }),
        };
        cfg.validate()
            .map_err(|e| Error::Config(format!("run '{}': {e}", self.name)))?;
        Ok(cfg)
    }
}

/// Root config: dataset + stream + shared model + named run variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    /// When false (the default) CSVs carry 0 in the wall_ms column so
    /// outputs stay byte-identical across reruns.
    #[serde(default)]
    pub record_wall_time: bool,
    pub dataset: DatasetSource,
    pub stream: StreamSpec,
    pub evaluation: EvaluationSpec,
    pub model: ModelSpec,
    pub runs: Vec<RunEntry>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".to_string()));
        }
        if self.runs.is_empty() {
            return Err(Error::Config("config needs at least one run".to_string()));
        }
        if self.evaluation.protocols.is_empty() {
            return Err(Error::Config(
                "evaluation needs at least one protocol".to_string(),
            ));
        }
        if self.model.hidden.is_empty() {
            return Err(Error::Config(
                "model.hidden needs at least one layer".to_string(),
            ));
        }
        let mut names = std::collections::BTreeSet::new();
        for run in &self.runs {
            if !names.insert(run.name.as_str()) {
                return Err(Error::Config(format!("duplicate run name '{}'", run.name)));
            }
            run.to_strategy_config()?;
        }
        self.stream.layout()?;
        if let DatasetSource::Synth { spec, .. } = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    /// Build the train/test splits for one run seed.
    pub fn materialize_dataset(&self, run_seed: u64) -> Result<(Dataset, Dataset)> {
        match &self.dataset {
            DatasetSource::Synth {
                spec,
                vary_per_seed,
            } => {
                let mut spec = spec.clone();
                if *vary_per_seed {
                    spec.seed = mix(&[spec.seed, domain::DATASET, run_seed]);
                }
                synth_dataset(&spec)
            }
            DatasetSource::Files {
                train_path,
                test_path,
            } => {
                let train = load_dataset(&PathBuf::from(train_path), Split::Train)?;
                let test = load_dataset(&PathBuf::from(test_path), Split::Test)?;
                Ok((train, test))
            }
        }
    }

    /// Build the stream for one run seed.
    pub fn materialize_stream(&self, train: &Dataset, run_seed: u64) -> Result<Stream> {
        let layout = self.stream.layout()?;
        build_stream(
            train,
            self.stream.scenario,
            &layout,
            *self
                .evaluation
                .protocols
                .first()
                .unwrap_or(&TestProtocol::CumulativeFull),
            mix(&[self.stream.seed, domain::STREAM, run_seed]),
        )
    }
}
