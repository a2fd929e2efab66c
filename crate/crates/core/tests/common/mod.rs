//! Shared test oracles: central finite differences over arbitrary scalar
//! functions of a parameter vector, and the comparison rule used by every
//! gradient check.

/// Central finite differences of `f` at `at` with step `eps`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, at: &[f64], eps: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(at.len());
    let mut point = at.to_vec();
    for i in 0..at.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let up = f(&point);
        point[i] = orig - eps;
        let down = f(&point);
        point[i] = orig;
        grad.push((up - down) / (2.0 * eps));
    }
    grad
}

/// Worst relative disagreement between two gradient vectors, with an
/// absolute floor of 1e-6 so exactly-zero entries compare cleanly.
pub fn max_rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    assert_eq!(analytic.len(), fd.len());
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &b)| {
            let diff = (a - b).abs();
            if diff <= 1e-6 {
                0.0
            } else {
                diff / a.abs().max(b.abs())
            }
        })
        .fold(0.0, f64::max)
}

pub fn assert_grad_close(analytic: &[f64], fd: &[f64], tol: f64, what: &str) {
    let err = max_rel_err(analytic, fd);
    assert!(
        err <= tol,
        "{what}: max relative gradient error {err:.3e} exceeds {tol:.0e}"
    );
}

use negrep_core::autodiff::Array;
use negrep_core::classifier::{ClassifierParams, DenseLayer};
use negrep_core::generator::GeneratorParams;

/// Central differences are only valid away from ReLU kinks: a parameter
/// nudge of 1e-4 must not flip any activation. These helpers report the
/// smallest |pre-activation| along a forward pass so instances too close
/// to a kink can be resampled.

fn relu(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.max(0.0);
    }
}

fn layer_pre(layer: &DenseLayer, x: &Array) -> Array {
    layer.eval(x).unwrap()
}

fn track_min(acc: &mut f64, pre: &Array) {
    for &v in pre.values() {
        *acc = acc.min(v.abs());
    }
}

/// Minimum |pre-activation| over the classifier's ReLU layers on `batch`.
pub fn classifier_relu_margin(cls: &ClassifierParams, batch: &Array) -> f64 {
    let mut margin = f64::INFINITY;
    let mut x = batch.clone();
    for layer in cls.pre.iter().chain(&cls.post) {
        let pre = layer_pre(layer, &x);
        track_min(&mut margin, &pre);
        let mut vals = pre.values().to_vec();
        relu(&mut vals);
        x = Array::new(pre.shape().to_vec(), vals).unwrap();
    }
    margin
}

/// Minimum |pre-activation| along the generator loss path (encoder hidden,
/// decoder hidden, decoder output ReLU) with the given noise.
pub fn generator_relu_margin(
    gen: &GeneratorParams,
    latent: &Array,
    labels: &[usize],
    noise: &Array,
) -> f64 {
    let mut margin = f64::INFINITY;
    let enc_pre = layer_pre(&gen.enc_hidden, latent);
    track_min(&mut margin, &enc_pre);
    let mut h = enc_pre.values().to_vec();
    relu(&mut h);
    let h = Array::new(enc_pre.shape().to_vec(), h).unwrap();
    let mu = layer_pre(&gen.enc_mu, &h);
    let logvar = layer_pre(&gen.enc_logvar, &h);
    let z: Vec<f64> = mu
        .values()
        .iter()
        .zip(logvar.values())
        .zip(noise.values())
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect();
    let n = latent.shape()[0];
    let mut zin = Vec::with_capacity(n * (gen.z_dim + gen.num_classes));
    for (i, &label) in labels.iter().enumerate() {
        zin.extend_from_slice(&z[i * gen.z_dim..(i + 1) * gen.z_dim]);
        let mut onehot = vec![0.0; gen.num_classes];
        onehot[label] = 1.0;
        zin.extend_from_slice(&onehot);
    }
    let zin = Array::new(vec![n, gen.z_dim + gen.num_classes], zin).unwrap();
    let dec_pre = layer_pre(&gen.dec_hidden, &zin);
    track_min(&mut margin, &dec_pre);
    let mut dh = dec_pre.values().to_vec();
    relu(&mut dh);
    let dh = Array::new(dec_pre.shape().to_vec(), dh).unwrap();
    let out_pre = layer_pre(&gen.dec_out, &dh);
    track_min(&mut margin, &out_pre);
    margin
}

/// Kink safety margin: a 1e-4 parameter step cannot move a pre-activation
/// by this much in the desk-scale nets used in these tests.
pub const KINK_MARGIN: f64 = 5e-3;
