//! The classifier: an MLP feature extractor with an explicit latent cut and
//! a per-class head weight group layout (one weight column plus bias per
//! class). Replay data enters at the cut, so the forward path is split into
//! `forward_latent` (below the cut) and `forward_head` (cut to logits).

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{glorot_uniform, seeded_rng, Array, Graph, NodeId};
use crate::error::{Error, Result};

/// Fully connected layer; `w` is `[in, out]`, `b` is `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Array,
    pub b: Array,
}

impl DenseLayer {
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        DenseLayer {
            w: glorot_uniform(fan_in, fan_out, rng),
            b: Array::zeros(vec![fan_out]),
        }
    }

    pub fn out_width(&self) -> usize {
        self.b.len()
    }

    pub fn in_width(&self) -> usize {
        self.w.shape()[0]
    }

    /// x @ w + b without a tape.
    pub fn eval(&self, x: &Array) -> Result<Array> {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let wn = g.constant(self.w.clone());
        let bn = g.constant(self.b.clone());
        let y = g.matmul(xn, wn)?;
        let y = g.add_row(y, bn)?;
        Ok(g.value(y).clone())
    }
}

/// Which parameter region a leaf belongs to; drives per-group learning
/// rates and freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Feature extractor below the latent cut.
    PreCut,
    /// Feature layers between the cut and the head (may be empty).
    PostCut,
    /// The classification head.
    Head,
}

/// A graph leaf bound to one of the model's parameter tensors.
#[derive(Debug, Clone, Copy)]
pub struct BoundParam {
    /// Stable index into the model's parameter enumeration; also the
    /// optimizer state key.
    pub key: usize,
    pub group: ParamGroup,
    pub node: NodeId,
}

#[derive(Debug, Clone)]
pub struct ClassifierParams {
    /// Layers below the latent cut; ReLU after each.
    pub pre: Vec<DenseLayer>,
    /// Layers between the cut and the head; ReLU after each.
    pub post: Vec<DenseLayer>,
    /// Head: `w` is `[width, C]`, column `c` plus `b[c]` form group `psi^c`.
    pub head: DenseLayer,
    /// When set, `pre` is excluded from training graphs entirely.
    pub frozen_below_cut: bool,
}

impl ClassifierParams {
    /// Fresh Glorot-initialized model: `input -> hidden.. (cut) -> post.. -> C`.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        post: &[usize],
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::InvalidArgument(
                "classifier needs at least one hidden layer below the cut".to_string(),
            ));
        }
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be > 0".to_string()));
        }
        let mut rng = seeded_rng(seed);
        let mut pre = Vec::with_capacity(hidden.len());
        let mut width = input_dim;
        for &h in hidden {
            pre.push(DenseLayer::init(width, h, &mut rng));
            width = h;
        }
        let mut post_layers = Vec::with_capacity(post.len());
        for &h in post {
            post_layers.push(DenseLayer::init(width, h, &mut rng));
            width = h;
        }
        let head = DenseLayer::init(width, num_classes, &mut rng);
        Ok(ClassifierParams {
            pre,
            post: post_layers,
            head,
            frozen_below_cut: false,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_width()
    }

    pub fn input_dim(&self) -> usize {
        self.pre[0].in_width()
    }

    /// Width of the latent cut (output of the last `pre` layer).
    pub fn latent_width(&self) -> usize {
        self.pre.last().unwrap().out_width()
    }

    // ── evaluation (no tape) ─────────────────────────────────────────

    /// Activations at the latent cut (post-ReLU).
    pub fn forward_latent(&self, batch: &Array) -> Result<Array> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let latent = self.graph_latent(&mut g, x, false)?.1;
        Ok(g.value(latent).clone())
    }

    /// Logits from latent activations.
    pub fn forward_head(&self, latent: &Array) -> Result<Array> {
        let mut g = Graph::new();
        let x = g.constant(latent.clone());
        let logits = self.graph_head(&mut g, x, false)?.1;
        Ok(g.value(logits).clone())
    }

    pub fn forward(&self, batch: &Array) -> Result<Array> {
        let latent = self.forward_latent(batch)?;
        self.forward_head(&latent)
    }

    /// Argmax class per row; ties break toward the lowest class id.
    pub fn predict(&self, batch: &Array) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok(argmax_rows(&logits))
    }

    // ── graph builders (training) ────────────────────────────────────

    /// Build the below-cut computation on `g`. When `trainable` is false or
    /// the extractor is frozen, weights enter as constants and no
    /// [`BoundParam`]s are returned for them.
    pub fn graph_latent(
        &self,
        g: &mut Graph,
        input: NodeId,
        trainable: bool,
    ) -> Result<(Vec<BoundParam>, NodeId)> {
        let trainable = trainable && !self.frozen_below_cut;
        let mut bound = Vec::new();
        let mut x = input;
        for (i, layer) in self.pre.iter().enumerate() {
            let (wn, bn) = if trainable {
                let wn = g.parameter(layer.w.clone());
                let bn = g.parameter(layer.b.clone());
                bound.push(BoundParam {
                    key: 2 * i,
                    group: ParamGroup::PreCut,
                    node: wn,
                });
                bound.push(BoundParam {
                    key: 2 * i + 1,
                    group: ParamGroup::PreCut,
                    node: bn,
                });
                (wn, bn)
            } else {
                (g.constant(layer.w.clone()), g.constant(layer.b.clone()))
            };
            let y = g.matmul(x, wn)?;
            let y = g.add_row(y, bn)?;
            x = g.relu(y)?;
        }
        Ok((bound, x))
    }

    /// Build the cut-to-logits computation on `g`.
    pub fn graph_head(
        &self,
        g: &mut Graph,
        latent: NodeId,
        trainable: bool,
    ) -> Result<(Vec<BoundParam>, NodeId)> {
        let mut bound = Vec::new();
        let mut key = 2 * self.pre.len();
        let mut x = latent;
        for layer in &self.post {
            let (wn, bn) = if trainable {
                let wn = g.parameter(layer.w.clone());
                let bn = g.parameter(layer.b.clone());
                bound.push(BoundParam {
                    key,
                    group: ParamGroup::PostCut,
                    node: wn,
                });
                bound.push(BoundParam {
                    key: key + 1,
                    group: ParamGroup::PostCut,
                    node: bn,
                });
                (wn, bn)
            } else {
                (g.constant(layer.w.clone()), g.constant(layer.b.clone()))
            };
            key += 2;
            let y = g.matmul(x, wn)?;
            let y = g.add_row(y, bn)?;
            x = g.relu(y)?;
        }
        let (wn, bn) = if trainable {
            let wn = g.parameter(self.head.w.clone());
            let bn = g.parameter(self.head.b.clone());
            bound.push(BoundParam {
                key,
                group: ParamGroup::Head,
                node: wn,
            });
            bound.push(BoundParam {
                key: key + 1,
                group: ParamGroup::Head,
                node: bn,
            });
            (wn, bn)
        } else {
            (g.constant(self.head.w.clone()), g.constant(self.head.b.clone()))
        };
        let y = g.matmul(x, wn)?;
        let logits = g.add_row(y, bn)?;
        Ok((bound, logits))
    }

    /// Write a gradient back into the parameter tensor a leaf was bound to.
    pub fn apply_to_param<R>(
        &mut self,
        bound: &BoundParam,
        f: impl FnOnce(&mut Array) -> R,
    ) -> R {
        let pre_keys = 2 * self.pre.len();
        let post_keys = 2 * self.post.len();
        let k = bound.key;
        let tensor = if k < pre_keys {
            let layer = &mut self.pre[k / 2];
            if k % 2 == 0 {
                &mut layer.w
            } else {
                &mut layer.b
            }
        } else if k < pre_keys + post_keys {
            let k = k - pre_keys;
            let layer = &mut self.post[k / 2];
            if k % 2 == 0 {
                &mut layer.w
            } else {
                &mut layer.b
            }
        } else {
            let k = k - pre_keys - post_keys;
            if k == 0 {
                &mut self.head.w
            } else {
                &mut self.head.b
            }
        };
        f(tensor)
    }

    // ── head weight groups (CWR) ─────────────────────────────────────

    /// Group `psi^c` as a flat vector: the head column for class `c`
    /// followed by its bias.
    pub fn head_group(&self, c: usize) -> Vec<f64> {
        let (width, classes) = (self.head.in_width(), self.num_classes());
        debug_assert!(c < classes);
        let mut out = Vec::with_capacity(width + 1);
        for i in 0..width {
            out.push(self.head.w.values()[i * classes + c]);
        }
        out.push(self.head.b.values()[c]);
        out
    }

    pub fn set_head_group(&mut self, c: usize, group: &[f64]) {
        let (width, classes) = (self.head.in_width(), self.num_classes());
        debug_assert_eq!(group.len(), width + 1);
        for i in 0..width {
            self.head.w.values_mut()[i * classes + c] = group[i];
        }
        self.head.b.values_mut()[c] = group[width];
    }

    /// Mean over the group's weights and bias together.
    pub fn head_group_mean(&self, c: usize) -> f64 {
        let g = self.head_group(c);
        g.iter().sum::<f64>() / g.len() as f64
    }

    pub fn zero_mean_head_group(&mut self, c: usize) {
        let mut g = self.head_group(c);
        let mu = g.iter().sum::<f64>() / g.len() as f64;
        for v in &mut g {
            *v -= mu;
        }
        self.set_head_group(c, &g);
    }
}

/// Row-wise argmax with ties broken toward the lowest index.
pub fn argmax_rows(logits: &Array) -> Vec<usize> {
    let (n, c) = (logits.rows(), logits.cols());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = logits.row(i);
        let mut best = 0;
        for j in 1..c {
            if row[j] > row[best] {
                best = j;
            }
        }
        out.push(best);
    }
    out
}

/// Copy of the head together with per-class counts of real data points
/// consumed in past experiences.
#[derive(Debug, Clone)]
pub struct HeadSnapshot {
    pub w: Array,
    pub b: Array,
    pub past_counts: Vec<u64>,
}

impl HeadSnapshot {
    /// All-zero snapshot used before the first experience.
    pub fn zeros(head_in_width: usize, num_classes: usize) -> Self {
        HeadSnapshot {
            w: Array::zeros(vec![head_in_width, num_classes]),
            b: Array::zeros(vec![num_classes]),
            past_counts: vec![0; num_classes],
        }
    }

    pub fn from_params(params: &ClassifierParams, past_counts: Vec<u64>) -> Self {
        HeadSnapshot {
            w: params.head.w.clone(),
            b: params.head.b.clone(),
            past_counts,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.b.len()
    }

    pub fn group(&self, c: usize) -> Vec<f64> {
        let width = self.w.shape()[0];
        let classes = self.num_classes();
        let mut out = Vec::with_capacity(width + 1);
        for i in 0..width {
            out.push(self.w.values()[i * classes + c]);
        }
        out.push(self.b.values()[c]);
        out
    }

    pub fn set_group(&mut self, c: usize, group: &[f64]) {
        let width = self.w.shape()[0];
        let classes = self.num_classes();
        debug_assert_eq!(group.len(), width + 1);
        for i in 0..width {
            self.w.values_mut()[i * classes + c] = group[i];
        }
        self.b.values_mut()[c] = group[width];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ClassifierParams {
        ClassifierParams::init(4, &[6, 5], &[], 3, 11).unwrap()
    }

    #[test]
    fn zero_input_zero_weights_gives_zero_latent() {
        let mut m = model();
        for layer in &mut m.pre {
            layer.w = Array::zeros(layer.w.shape().to_vec());
            layer.b = Array::zeros(layer.b.shape().to_vec());
        }
        let x = Array::zeros(vec![2, 4]);
        let latent = m.forward_latent(&x).unwrap();
        assert!(latent.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn latent_is_nonnegative() {
        let m = model();
        let x = Array::new(vec![3, 4], (0..12).map(|i| i as f64 - 6.0).collect()).unwrap();
        let latent = m.forward_latent(&x).unwrap();
        assert!(latent.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn latent_then_head_equals_full_forward() {
        let m = model();
        let x = Array::new(vec![2, 4], vec![0.3, -1.0, 0.5, 2.0, 1.0, 0.0, -0.2, 0.7]).unwrap();
        let full = m.forward(&x).unwrap();
        let latent = m.forward_latent(&x).unwrap();
        let composed = m.forward_head(&latent).unwrap();
        assert_eq!(full.values(), composed.values());
    }

    #[test]
    fn logits_width_is_class_count() {
        let m = model();
        let x = Array::zeros(vec![2, 4]);
        assert_eq!(m.forward(&x).unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn bias_shift_moves_only_that_logit() {
        let mut m = model();
        let latent = Array::zeros(vec![1, 5]);
        let before = m.forward_head(&latent).unwrap();
        // zero latent: shifting every weight in group 1 by b changes only
        // logit 1, and only through the bias entry
        let mut group = m.head_group(1);
        for v in &mut group {
            *v += 2.5;
        }
        m.set_head_group(1, &group);
        let after = m.forward_head(&latent).unwrap();
        assert_eq!(before.values()[0], after.values()[0]);
        assert!((after.values()[1] - before.values()[1] - 2.5).abs() < 1e-12);
        assert_eq!(before.values()[2], after.values()[2]);
    }

    #[test]
    fn permuting_head_groups_permutes_logits() {
        let mut m = model();
        let x = Array::new(vec![1, 4], vec![0.5, -0.3, 1.0, 0.2]).unwrap();
        let before = m.forward(&x).unwrap();
        let g0 = m.head_group(0);
        let g2 = m.head_group(2);
        m.set_head_group(0, &g2);
        m.set_head_group(2, &g0);
        let after = m.forward(&x).unwrap();
        assert_eq!(before.values()[0], after.values()[2]);
        assert_eq!(before.values()[2], after.values()[0]);
        assert_eq!(before.values()[1], after.values()[1]);
    }

    #[test]
    fn predict_ties_break_low() {
        let m = ClassifierParams::init(2, &[2], &[], 2, 3).unwrap();
        let mut m = m;
        // zero head: all logits equal -> class 0
        m.head.w = Array::zeros(m.head.w.shape().to_vec());
        m.head.b = Array::zeros(m.head.b.shape().to_vec());
        let x = Array::new(vec![3, 2], vec![1.0, 2.0, -1.0, 0.5, 0.0, 0.0]).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn argmax_values() {
        let logits = Array::new(vec![2, 2], vec![0.1, 0.9, 0.5, 0.5]).unwrap();
        assert_eq!(argmax_rows(&logits), vec![1, 0]);
    }

    #[test]
    fn zero_meaning_a_group() {
        let mut m = model();
        m.zero_mean_head_group(1);
        assert!(m.head_group_mean(1).abs() < 1e-15);
    }

    #[test]
    fn frozen_pre_excluded_from_training_graph() {
        let mut m = model();
        m.frozen_below_cut = true;
        let mut g = Graph::new();
        let x = g.constant(Array::zeros(vec![1, 4]));
        let (bound, _) = m.graph_latent(&mut g, x, true).unwrap();
        assert!(bound.is_empty());
    }

    #[test]
    fn param_keys_round_trip() {
        let mut m = model();
        let mut g = Graph::new();
        let x = g.constant(Array::zeros(vec![1, 4]));
        let (pre_bound, latent) = m.graph_latent(&mut g, x, true).unwrap();
        let (head_bound, _) = m.graph_head(&mut g, latent, true).unwrap();
        assert_eq!(pre_bound.len(), 4);
        assert_eq!(head_bound.len(), 2);
        // the last bound param is the head bias
        let hb = head_bound.last().unwrap();
        m.apply_to_param(hb, |t| {
            assert_eq!(t.shape(), &[3]);
        });
    }
}
