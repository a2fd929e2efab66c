//! Declarative experiment runner: config parsing, per-seed scheduling,
//! evaluation protocols, aggregation and metrics persistence.

pub mod config;
pub mod eval;
pub mod presets;
pub mod schedule;
pub mod seedmix;
pub mod suite;

pub use config::{DatasetSource, RunConfig, RunEntry, StreamSpec};
pub use eval::{evaluate, Evaluation};
pub use schedule::{lr_schedule, lr_schedule_factor};
pub use suite::{run_suite, RunSummary, SuiteReport};
