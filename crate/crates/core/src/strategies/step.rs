use crate::autodiff::optim::Sgd;
use crate::autodiff::{Array, Graph};
use crate::classifier::{BoundParam, ClassifierParams, ParamGroup};
use crate::error::Result;
use crate::replay::Minibatch;
use crate::strategies::{build_lwf_loss, ReplayMode, SiState};

/// LwF inputs for one step: the pre-experience model and its knobs.
pub struct LwfStepData<'a> {
    pub teacher: &'a ClassifierParams,
    pub alpha: f64,
    pub temperature: f64,
    /// Classes seen before the current experience, ascending.
    pub past_classes: Vec<usize>,
}

/// Everything one gradient step needs besides the model and the batch.
pub struct StepContext<'a> {
    pub optimizer: &'a mut Sgd,
    pub lr_phi: f64,
    pub lr_psi: f64,
    /// Step-level mask switch: `Negative` masks replay rows' gradient seeds
    /// at the replayed classes. AR1 passes `Positive`/`None` here and
    /// protects the head in consolidation instead.
    pub polarity: ReplayMode,
    pub lwf: Option<LwfStepData<'a>>,
    pub si: Option<&'a mut SiState>,
}

/// Loss readings from one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub ce: f64,
    pub distill: f64,
    pub si_penalty: f64,
}

/// Step result with the head gradient exposed, for diagnostics and for
/// verifying the masking guarantees from outside the crate.
pub struct StepOutcome {
    pub stats: StepStats,
    /// Gradient of the loss w.r.t. the head weight matrix `[width, C]`,
    /// captured before the update.
    pub head_w_grad: Array,
    /// Gradient w.r.t. the head bias `[C]`.
    pub head_b_grad: Array,
}

/// One training step over a composed minibatch: current rows flow through
/// the full network, replay rows enter at the latent cut, the union feeds
/// the head. Under negative polarity the per-row gradient seed of every
/// replay row is zeroed at the classes present in replay memory, so replay
/// patterns act purely as negatives for the other classes.
pub fn masked_training_step(
    cls: &mut ClassifierParams,
    batch: &Minibatch,
    ctx: &mut StepContext,
) -> Result<StepStats> {
    Ok(training_step_detailed(cls, batch, ctx)?.stats)
}

/// [`masked_training_step`] variant that also returns the head gradients.
pub fn training_step_detailed(
    cls: &mut ClassifierParams,
    batch: &Minibatch,
    ctx: &mut StepContext,
) -> Result<StepOutcome> {
    let nc = batch.current_labels.len();
    let nr = batch.replay_labels.len();
    let n = nc + nr;
    let c = cls.num_classes();
    debug_assert!(n > 0, "empty minibatch");

    let mut g = Graph::new();
    let mut bound: Vec<BoundParam> = Vec::new();

    let latent_all = if nc > 0 {
        let input = g.constant(batch.current_patterns.clone());
        let (pre_bound, latent_cur) = cls.graph_latent(&mut g, input, true)?;
        bound.extend(pre_bound);
        if nr > 0 {
            let replay = g.constant(batch.replay_patterns.clone());
            g.concat_rows(latent_cur, replay)?
        } else {
            latent_cur
        }
    } else {
        g.constant(batch.replay_patterns.clone())
    };

    let (head_bound, logits) = cls.graph_head(&mut g, latent_all, true)?;
    bound.extend(head_bound);

    let labels = batch.union_labels();
    let seed_mask = if ctx.polarity == ReplayMode::Negative && nr > 0 {
        let mut mask = vec![1.0; n * c];
        for row in nc..n {
            for &class in &batch.replay_classes {
                mask[row * c + class] = 0.0;
            }
        }
        Some(mask)
    } else {
        None
    };

    let (mut loss, ce_node, distill_node) = match &ctx.lwf {
        Some(lwf) if !lwf.past_classes.is_empty() => {
            let teacher_logits = teacher_logits(lwf.teacher, batch)?;
            let (total, ce, distill) = build_lwf_loss(
                &mut g,
                logits,
                &teacher_logits,
                &labels,
                &lwf.past_classes,
                lwf.alpha,
                lwf.temperature,
                seed_mask,
            )?;
            (total, ce, Some(distill))
        }
        _ => {
            let ce = g.softmax_cross_entropy(logits, &labels, seed_mask)?;
            (ce, ce, None)
        }
    };

    let mut si_penalty = 0.0;
    if let Some(si) = ctx.si.as_deref() {
        if let Some(penalty) = si.penalty_node(&mut g, &bound)? {
            si_penalty = g.value(penalty).scalar_value();
            loss = g.add(loss, penalty)?;
        }
    }

    g.backward(loss)?;

    let mut head_w_grad = Array::zeros(cls.head.w.shape().to_vec());
    let mut head_b_grad = Array::zeros(vec![c]);
    for b in &bound {
        let grad = match g.grad_array(b.node) {
            Some(grad) => grad,
            None => continue,
        };
        match b.group {
            ParamGroup::Head => {
                // record for callers before updating
                if grad.ndim() == 2 {
                    head_w_grad = grad.clone();
                } else {
                    head_b_grad = grad.clone();
                }
            }
            _ => {}
        }
        let lr = match b.group {
            ParamGroup::PreCut | ParamGroup::PostCut => ctx.lr_phi,
            ParamGroup::Head => ctx.lr_psi,
        };
        let track_si = ctx.si.is_some()
            && matches!(b.group, ParamGroup::PreCut | ParamGroup::PostCut);
        let before = if track_si {
            Some(cls.apply_to_param(b, |t| t.values().to_vec()))
        } else {
            None
        };
        let optimizer = &mut *ctx.optimizer;
        cls.apply_to_param(b, |tensor| optimizer.step(b.key, lr, tensor, &grad))?;
        if let (Some(before), Some(si)) = (before, ctx.si.as_deref_mut()) {
            let after = cls.apply_to_param(b, |t| t.values().to_vec());
            si.accumulate(b.key, grad.values(), &before, &after);
        }
    }

    let stats = StepStats {
        ce: g.value(ce_node).scalar_value(),
        distill: distill_node.map(|d| g.value(d).scalar_value()).unwrap_or(0.0),
        si_penalty,
    };
    Ok(StepOutcome {
        stats,
        head_w_grad,
        head_b_grad,
    })
}

/// Teacher logits over the union batch: current rows through the full
/// teacher, replay rows through its head from the cut.
fn teacher_logits(teacher: &ClassifierParams, batch: &Minibatch) -> Result<Array> {
    let nc = batch.current_labels.len();
    let nr = batch.replay_labels.len();
    let c = teacher.num_classes();
    let mut values = Vec::with_capacity((nc + nr) * c);
    if nc > 0 {
        values.extend_from_slice(teacher.forward(&batch.current_patterns)?.values());
    }
    if nr > 0 {
        values.extend_from_slice(teacher.forward_head(&batch.replay_patterns)?.values());
    }
    Array::new(vec![nc + nr, c], values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn head_only_batch(replay_classes: &[usize]) -> Minibatch {
        // replay-only batch at a 3-wide cut
        let replay_patterns = Array::new(
            vec![4, 3],
            vec![
                0.5, 1.0, 0.0, //
                0.2, 0.0, 0.7, //
                1.5, 0.3, 0.1, //
                0.0, 0.9, 0.4,
            ],
        )
        .unwrap();
        Minibatch {
            current_patterns: Array::zeros(vec![0, 2]),
            current_labels: vec![],
            replay_patterns,
            replay_labels: vec![0, 1, 0, 1],
            replay_classes: replay_classes.iter().copied().collect(),
        }
    }

    fn model() -> ClassifierParams {
        ClassifierParams::init(2, &[3], &[], 4, 13).unwrap()
    }

    #[test]
    fn replay_only_negative_leaves_replayed_head_groups_unchanged() {
        let mut cls = model();
        let before = cls.clone();
        let batch = head_only_batch(&[0, 1]);
        let mut opt = Sgd::new(0.0, 0.0).unwrap();
        let mut ctx = StepContext {
            optimizer: &mut opt,
            lr_phi: 0.1,
            lr_psi: 0.1,
            polarity: ReplayMode::Negative,
            lwf: None,
            si: None,
        };
        let outcome = training_step_detailed(&mut cls, &batch, &mut ctx).unwrap();
        // replayed classes 0 and 1: exactly zero gradient, groups unchanged
        for c in [0usize, 1] {
            let col: Vec<f64> = (0..3)
                .map(|i| outcome.head_w_grad.values()[i * 4 + c])
                .collect();
            assert!(col.iter().all(|&v| v == 0.0), "class {c} grads {col:?}");
            assert_eq!(outcome.head_b_grad.values()[c], 0.0);
            assert_eq!(before.head_group(c), cls.head_group(c));
        }
        // non-replayed classes still receive the antagonist push
        let other: Vec<f64> = (0..3)
            .map(|i| outcome.head_w_grad.values()[i * 4 + 2])
            .collect();
        assert!(other.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn positive_polarity_is_bitwise_identical_to_unmasked() {
        let batch = Minibatch {
            current_patterns: Array::new(vec![2, 2], vec![0.3, -0.4, 1.0, 0.2]).unwrap(),
            current_labels: vec![2, 3],
            replay_patterns: Array::new(vec![2, 3], vec![0.5, 0.0, 0.2, 0.1, 0.8, 0.0]).unwrap(),
            replay_labels: vec![0, 1],
            replay_classes: [0, 1].into_iter().collect(),
        };
        let mut a = model();
        let mut b = model();
        let mut opt_a = Sgd::new(0.9, 1e-4).unwrap();
        let mut opt_b = Sgd::new(0.9, 1e-4).unwrap();
        for _ in 0..3 {
            let mut ctx = StepContext {
                optimizer: &mut opt_a,
                lr_phi: 0.05,
                lr_psi: 0.05,
                polarity: ReplayMode::Positive,
                lwf: None,
                si: None,
            };
            masked_training_step(&mut a, &batch, &mut ctx).unwrap();
            let mut ctx = StepContext {
                optimizer: &mut opt_b,
                lr_phi: 0.05,
                lr_psi: 0.05,
                polarity: ReplayMode::None,
                lwf: None,
                si: None,
            };
            masked_training_step(&mut b, &batch, &mut ctx).unwrap();
        }
        for (x, y) in a.head.w.values().iter().zip(b.head.w.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in a.pre[0].w.values().iter().zip(b.pre[0].w.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn frozen_extractor_is_bit_identical_after_steps() {
        let mut cls = model();
        cls.frozen_below_cut = true;
        let before = cls.pre[0].w.values().to_vec();
        let batch = Minibatch {
            current_patterns: Array::new(vec![2, 2], vec![0.3, -0.4, 1.0, 0.2]).unwrap(),
            current_labels: vec![0, 1],
            replay_patterns: Array::zeros(vec![0, 3]),
            replay_labels: vec![],
            replay_classes: BTreeSet::new(),
        };
        let mut opt = Sgd::new(0.9, 1e-4).unwrap();
        for _ in 0..5 {
            let mut ctx = StepContext {
                optimizer: &mut opt,
                lr_phi: 0.1,
                lr_psi: 0.1,
                polarity: ReplayMode::None,
                lwf: None,
                si: None,
            };
            masked_training_step(&mut cls, &batch, &mut ctx).unwrap();
        }
        for (x, y) in before.iter().zip(cls.pre[0].w.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
