use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{seeded_rng, Array};
use crate::data::{Dataset, Split, SynthSpec};
use crate::error::Result;

const CENTER_RADIUS: f64 = 3.0;
const CLUSTER_JITTER: f64 = 0.6;

/// Gaussian-mixture classes: each class sits on its own base direction
/// (orthonormalized while classes fit into the ambient dimension), with
/// `clusters_per_class` jittered centers and isotropic sample spread.
/// Train and test are disjoint draws from the same mixtures; everything is
/// a pure function of the spec.
pub fn synth_dataset(spec: &SynthSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let d = spec.dims;

    // class base directions, Gram-Schmidt while possible
    let mut bases: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    for c in 0..spec.classes {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        if c < d {
            for b in &bases {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // a fresh Gaussian draw is never exactly in the span; guard anyway
        let norm = if norm < 1e-9 { 1.0 } else { norm };
        for x in &mut v {
            *x /= norm;
        }
        bases.push(v);
    }

    // cluster centers per class
    let mut centers: Vec<Vec<Vec<f64>>> = Vec::with_capacity(spec.classes);
    for base in &bases {
        let mut class_centers = Vec::with_capacity(spec.clusters_per_class);
        for _ in 0..spec.clusters_per_class {
            let center: Vec<f64> = base
                .iter()
                .map(|&b| CENTER_RADIUS * b + CLUSTER_JITTER * rng.sample::<f64, _>(StandardNormal))
                .collect();
            class_centers.push(center);
        }
        centers.push(class_centers);
    }

    let mut draw = |count: usize, split: Split| -> Result<Dataset> {
        let mut patterns = Vec::with_capacity(spec.classes * count);
        let mut labels = Vec::with_capacity(spec.classes * count);
        for (c, class_centers) in centers.iter().enumerate() {
            for i in 0..count {
                let center = &class_centers[i % class_centers.len()];
                let values: Vec<f64> = center
                    .iter()
                    .map(|&m| m + spec.spread * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                patterns.push(Array::new(vec![d], values)?);
                labels.push(c);
            }
        }
        Dataset::new(patterns, labels, spec.classes, split)
    };

    let train = draw(spec.train_per_class, Split::Train)?;
    let test = draw(spec.test_per_class, Split::Test)?;
    Ok((train, test))
}
