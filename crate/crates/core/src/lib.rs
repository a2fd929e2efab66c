//! Continual-learning engine with generative negative replay.
//!
//! A classifier is trained over a stream of experiences while a conditional
//! VAE is trained interleaved with it; replay data drawn from memory is used
//! either positively (standard rehearsal) or negatively (as antagonists that
//! never update the replayed classes' head weights). The crate also ships
//! the scenario formalism (NI / NC / NIC streams), an original/generated/
//! random replay memory, the ER / LwF / AR1 strategies, and a seeded
//! benchmark harness with CSV/JSON outputs.

pub mod autodiff;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod error;
pub mod generator;
pub mod harness;
pub mod replay;
pub mod strategies;

pub use error::{Error, Result};
