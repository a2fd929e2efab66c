use crate::autodiff::{Array, Graph, NodeId};
use crate::error::{Error, Result};

/// Build the LwF objective on `g`:
/// (1 - alpha) * CE(student, labels) + alpha * T^2 * KL(teacher || student),
/// with the distillation term restricted to `past_classes` and both sides
/// softmaxed at temperature `t`. `seed_mask`, when given, applies to the
/// gradient seeds of both terms (the class-level replay mask).
/// Returns (total, ce, distill) nodes.
#[allow(clippy::too_many_arguments)]
pub fn build_lwf_loss(
    g: &mut Graph,
    student_logits: NodeId,
    teacher_logits: &Array,
    labels: &[usize],
    past_classes: &[usize],
    alpha: f64,
    t: f64,
    seed_mask: Option<Vec<f64>>,
) -> Result<(NodeId, NodeId, NodeId)> {
    if t <= 0.0 {
        return Err(Error::BadTemperature(t));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "LwF alpha must be in [0,1], got {alpha}"
        )));
    }
    let ce = g.softmax_cross_entropy(student_logits, labels, seed_mask.clone())?;
    let distill = g.distillation(student_logits, teacher_logits, past_classes, t, seed_mask)?;
    let ce_w = g.scale(ce, 1.0 - alpha)?;
    let distill_w = g.scale(distill, alpha * t * t)?;
    let total = g.add(ce_w, distill_w)?;
    Ok((total, ce, distill))
}

/// Forward-only LwF loss value.
pub fn lwf_loss(
    student_logits: &Array,
    teacher_logits: &Array,
    labels: &[usize],
    past_classes: &[usize],
    alpha: f64,
    t: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.constant(student_logits.clone());
    let (total, _, _) = build_lwf_loss(&mut g, s, teacher_logits, labels, past_classes, alpha, t, None)?;
    Ok(g.value(total).scalar_value())
}
