use std::collections::BTreeMap;

use crate::autodiff::{Array, Graph, NodeId};
use crate::classifier::{BoundParam, ClassifierParams, ParamGroup};
use crate::error::Result;
use crate::strategies::SiParams;

const DAMPING: f64 = 1e-3;

#[derive(Debug, Clone)]
struct SiSlot {
    omega: Vec<f64>,
    theta_star: Vec<f64>,
    fisher: Vec<f64>,
}

/// Synaptic-intelligence bookkeeping for the feature extractor: a running
/// path integral per parameter, reference weights from the last experience
/// boundary, and the clipped importance matrix.
#[derive(Debug, Clone)]
pub struct SiState {
    pub lambda: f64,
    pub clip: f64,
    pub multiplier: f64,
    slots: BTreeMap<usize, SiSlot>,
}

impl SiState {
    /// Initialize at the first experience: importances are zero, reference
    /// weights are the current feature-extractor tensors.
    pub fn new(params: &ClassifierParams, si: &SiParams) -> Self {
        let mut slots = BTreeMap::new();
        let mut key = 0;
        for layer in params.pre.iter().chain(&params.post) {
            for tensor in [&layer.w, &layer.b] {
                slots.insert(
                    key,
                    SiSlot {
                        omega: vec![0.0; tensor.len()],
                        theta_star: tensor.values().to_vec(),
                        fisher: vec![0.0; tensor.len()],
                    },
                );
                key += 1;
            }
        }
        SiState {
            lambda: si.lambda,
            clip: si.clip,
            multiplier: si.multiplier,
            slots,
        }
    }

    fn covers(&self, bound: &BoundParam) -> bool {
        matches!(bound.group, ParamGroup::PreCut | ParamGroup::PostCut)
            && self.slots.contains_key(&bound.key)
    }

    /// Build lambda * sum(F * (theta - theta*)^2) over the feature leaves
    /// present in the graph. Returns None when no covered leaf is bound
    /// (e.g. frozen extractor).
    pub fn penalty_node(&self, g: &mut Graph, bound: &[BoundParam]) -> Result<Option<NodeId>> {
        let mut acc: Option<NodeId> = None;
        for b in bound {
            if !self.covers(b) {
                continue;
            }
            let slot = &self.slots[&b.key];
            let shape = g.value(b.node).shape().to_vec();
            let star = g.constant(Array::new(shape.clone(), slot.theta_star.clone())?);
            let fisher = g.constant(Array::new(shape, slot.fisher.clone())?);
            let diff = g.sub(b.node, star)?;
            let sq = g.mul(diff, diff)?;
            let weighted = g.mul(sq, fisher)?;
            let term = g.sum(weighted)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        match acc {
            Some(a) => Ok(Some(g.scale(a, self.lambda)?)),
            None => Ok(None),
        }
    }

    /// Current penalty value (no graph), for reporting and tests.
    pub fn penalty_value(&self, params: &ClassifierParams) -> f64 {
        let mut total = 0.0;
        let mut key = 0;
        for layer in params.pre.iter().chain(&params.post) {
            for tensor in [&layer.w, &layer.b] {
                if let Some(slot) = self.slots.get(&key) {
                    for ((&v, &s), &f) in tensor
                        .values()
                        .iter()
                        .zip(&slot.theta_star)
                        .zip(&slot.fisher)
                    {
                        total += f * (v - s) * (v - s);
                    }
                }
                key += 1;
            }
        }
        self.lambda * total
    }

    /// Per-step path-integral accumulation: omega += -g * (after - before).
    pub fn accumulate(&mut self, key: usize, grad: &[f64], before: &[f64], after: &[f64]) {
        if let Some(slot) = self.slots.get_mut(&key) {
            for ((o, &g), (&b, &a)) in slot.omega.iter_mut().zip(grad).zip(before.iter().zip(after))
            {
                *o += -g * (a - b);
            }
        }
    }

    /// Experience boundary: fold the path integral into the importance
    /// matrix (clipped into [0, clip], scaled by the multiplier), refresh
    /// the reference weights, reset omega.
    pub fn end_experience(&mut self, params: &ClassifierParams) {
        let mut key = 0;
        for layer in params.pre.iter().chain(&params.post) {
            for tensor in [&layer.w, &layer.b] {
                if let Some(slot) = self.slots.get_mut(&key) {
                    for ((f, o), (&v, &s)) in slot
                        .fisher
                        .iter_mut()
                        .zip(&slot.omega)
                        .zip(tensor.values().iter().zip(&slot.theta_star))
                    {
                        let delta_sq = (v - s) * (v - s);
                        let contribution = (o / (delta_sq + DAMPING)).clamp(0.0, self.clip);
                        *f += contribution * self.multiplier;
                    }
                    slot.theta_star = tensor.values().to_vec();
                    for o in &mut slot.omega {
                        *o = 0.0;
                    }
                }
                key += 1;
            }
        }
    }

    /// Largest importance entry, for the clip-bound check.
    pub fn max_fisher(&self) -> f64 {
        self.slots
            .values()
            .flat_map(|s| s.fisher.iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn fisher_nonnegative(&self) -> bool {
        self.slots
            .values()
            .all(|s| s.fisher.iter().all(|&f| f >= 0.0))
    }
}
