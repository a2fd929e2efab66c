//! Minimal reverse-mode differentiation over dense f64 arrays.
//!
//! The op set is what the MLP classifier and the conditional VAE need:
//! matmul, broadcast bias add, elementwise arithmetic, ReLU, exp/log,
//! reductions, a fused softmax cross-entropy, temperature distillation and
//! the reparameterized Gaussian sample. Graphs are single-use tapes: build,
//! read the forward value, run `backward`, read gradients.

mod array;
mod graph;
pub mod optim;

pub use array::Array;
pub use graph::{Graph, NodeId};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Glorot-uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Array {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-a..a))
        .collect();
    Array::new(vec![fan_in, fan_out], values).expect("finite init values")
}

/// Seeded RNG used everywhere; one stream per (seed, purpose) pair keeps
/// runs reproducible.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_respects_bound() {
        let mut rng = seeded_rng(7);
        let w = glorot_uniform(30, 10, &mut rng);
        let a = (6.0 / 40.0f64).sqrt();
        assert!(w.values().iter().all(|v| v.abs() < a));
        assert_eq!(w.shape(), &[30, 10]);
    }

    #[test]
    fn seeded_rng_deterministic() {
        let a: f64 = seeded_rng(3).gen();
        let b: f64 = seeded_rng(3).gen();
        assert_eq!(a, b);
    }
}
