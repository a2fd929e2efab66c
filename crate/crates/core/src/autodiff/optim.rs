use std::collections::HashMap;

use crate::autodiff::Array;
use crate::error::{Error, Result};

fn check_aligned(op: &'static str, param: &Array, grad: &Array) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("param {:?} vs grad {:?}", param.shape(), grad.shape()),
        });
    }
    Ok(())
}

/// SGD with a classical momentum buffer and L2 weight decay added to the
/// gradient. Buffers are keyed by the caller's parameter index and persist
/// across steps.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    buffers: HashMap<usize, Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::BadMomentum(momentum));
        }
        if weight_decay < 0.0 {
            return Err(Error::BadWeightDecay(weight_decay));
        }
        Ok(Sgd {
            momentum,
            weight_decay,
            buffers: HashMap::new(),
        })
    }

    /// One update: buf = momentum * buf + (grad + wd * param);
    /// param -= lr * buf.
    pub fn step(&mut self, key: usize, lr: f64, param: &mut Array, grad: &Array) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::BadLearningRate(lr));
        }
        check_aligned("sgd_step", param, grad)?;
        let buf = self
            .buffers
            .entry(key)
            .or_insert_with(|| vec![0.0; param.len()]);
        let wd = self.weight_decay;
        let mu = self.momentum;
        for ((p, &g), b) in param.values_mut().iter_mut().zip(grad.values()).zip(buf) {
            let g = g + wd * *p;
            *b = mu * *b + g;
            *p -= lr * *b;
        }
        param.assert_finite("sgd_step")
    }
}

/// Adam with bias correction; weight decay, when nonzero, is added to the
/// gradient (L2 style, matching the SGD path).
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    state: HashMap<usize, AdamSlot>,
}

#[derive(Debug, Clone)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::InvalidArgument(format!(
                "adam betas must be in [0,1), got ({beta1}, {beta2})"
            )));
        }
        if weight_decay < 0.0 {
            return Err(Error::BadWeightDecay(weight_decay));
        }
        Ok(Adam {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            state: HashMap::new(),
        })
    }

    pub fn step(&mut self, key: usize, lr: f64, param: &mut Array, grad: &Array) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::BadLearningRate(lr));
        }
        check_aligned("adam_step", param, grad)?;
        let slot = self.state.entry(key).or_insert_with(|| AdamSlot {
            m: vec![0.0; param.len()],
            v: vec![0.0; param.len()],
            t: 0,
        });
        slot.t += 1;
        let bc1 = 1.0 - self.beta1.powi(slot.t as i32);
        let bc2 = 1.0 - self.beta2.powi(slot.t as i32);
        for (i, (p, &g)) in param
            .values_mut()
            .iter_mut()
            .zip(grad.values())
            .enumerate()
        {
            let g = g + self.weight_decay * *p;
            slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
            slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = slot.m[i] / bc1;
            let vhat = slot.v[i] / bc2;
            *p -= lr * mhat / (vhat.sqrt() + self.eps);
        }
        param.assert_finite("adam_step")
    }
}

/// Optimizer kind selected by config; the generator defaults to the
/// adaptive one.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn step(&mut self, key: usize, lr: f64, param: &mut Array, grad: &Array) -> Result<()> {
        match self {
            Optimizer::Sgd(o) => o.step(key, lr, param, grad),
            Optimizer::Adam(o) => o.step(key, lr, param, grad),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Array {
        Array::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn plain_step() {
        let mut opt = Sgd::new(0.0, 0.0).unwrap();
        let mut w = one(1.0);
        opt.step(0, 0.1, &mut w, &one(1.0)).unwrap();
        assert!((w.values()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_buffer_arithmetic() {
        // two identical steps, momentum 0.9, g = 1, lr = 0.1:
        // w = 1 - 0.1 - 0.19 = 0.71
        let mut opt = Sgd::new(0.9, 0.0).unwrap();
        let mut w = one(1.0);
        opt.step(0, 0.1, &mut w, &one(1.0)).unwrap();
        opt.step(0, 0.1, &mut w, &one(1.0)).unwrap();
        assert!((w.values()[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn decay_only() {
        let mut opt = Sgd::new(0.0, 0.1).unwrap();
        let mut w = one(1.0);
        opt.step(0, 1.0, &mut w, &one(0.0)).unwrap();
        assert!((w.values()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_lr_rejected() {
        let mut opt = Sgd::new(0.0, 0.0).unwrap();
        let mut w = one(1.0);
        assert!(matches!(
            opt.step(0, 0.0, &mut w, &one(1.0)),
            Err(Error::BadLearningRate(_))
        ));
        assert!(matches!(
            opt.step(0, -0.1, &mut w, &one(1.0)),
            Err(Error::BadLearningRate(_))
        ));
    }

    #[test]
    fn bad_momentum_rejected() {
        assert!(Sgd::new(1.0, 0.0).is_err());
        assert!(Sgd::new(-0.1, 0.0).is_err());
        assert!(Sgd::new(0.999, 0.0).is_ok());
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut opt = Adam::new(0.9, 0.999, 0.0).unwrap();
        let mut w = one(1.0);
        opt.step(0, 0.1, &mut w, &one(2.0)).unwrap();
        // first Adam step is ~ -lr * sign(g)
        assert!(w.values()[0] < 1.0 && w.values()[0] > 0.89);
    }

    #[test]
    fn buffers_are_per_key() {
        let mut opt = Sgd::new(0.9, 0.0).unwrap();
        let mut a = one(1.0);
        let mut b = one(1.0);
        opt.step(0, 0.1, &mut a, &one(1.0)).unwrap();
        opt.step(1, 0.1, &mut b, &one(1.0)).unwrap();
        assert_eq!(a.values()[0], b.values()[0]);
    }
}
