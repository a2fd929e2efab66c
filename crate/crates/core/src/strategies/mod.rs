//! Continual-learning strategies: ER, LwF and AR1 (CWR head management with
//! optional SI feature protection), each combinable with positive or
//! negative replay from original, generated or random sources.

mod config;
mod cwr;
mod lwf;
mod runner;
mod si;
mod step;

pub use config::{
    GenOptimizerKind, GenTrainConfig, LwfParams, ReplayMode, ReplaySource, SiParams,
    StrategyConfig, StrategyKind,
};
pub use cwr::{cwr_begin_experience, weight_consolidation, ConsolidationInputs};
pub use lwf::{build_lwf_loss, lwf_loss};
pub use runner::{run_continual, ExperienceMetrics, LossParts, RunInputs};
pub use si::SiState;
pub use step::{masked_training_step, training_step_detailed, LwfStepData, StepContext, StepOutcome, StepStats};
