use std::collections::{BTreeMap, BTreeSet};

use crate::classifier::{ClassifierParams, HeadSnapshot};
use crate::error::{Error, Result};
use crate::strategies::ReplayMode;

/// Reset every head group to zero, then load the snapshot's groups for the
/// classes visible this experience (current data plus replay).
pub fn cwr_begin_experience(
    params: &mut ClassifierParams,
    snapshot: &HeadSnapshot,
    experience_classes: &BTreeSet<usize>,
    memory_classes: &BTreeSet<usize>,
) {
    let zero = vec![0.0; params.head.in_width() + 1];
    for c in 0..params.num_classes() {
        params.set_head_group(c, &zero);
    }
    for &c in experience_classes.union(memory_classes) {
        params.set_head_group(c, &snapshot.group(c));
    }
}

/// Per-class data counts feeding consolidation.
#[derive(Debug, Clone, Default)]
pub struct ConsolidationInputs {
    /// Real (non-replay) pattern counts of the current experience.
    pub current_real: BTreeMap<usize, u64>,
    /// Replay-row occurrences per class across the experience's minibatches;
    /// only consulted for positive replay of classes absent from the
    /// experience.
    pub current_replay: BTreeMap<usize, u64>,
}

/// End-of-experience head consolidation.
///
/// For each class in the experience or the replay set: zero-mean the group,
/// then keep it (new class), average it against the snapshot weighted by
/// w_past = sqrt(past/current) (seen class), or — for replay-only classes —
/// consolidate likewise under positive replay / restore the snapshot group
/// bitwise under negative replay. Groups of classes touched by neither the
/// experience nor the replay set are restored from the snapshot, so the
/// resulting head is the full consolidated store. Finally the snapshot is
/// refreshed and past counts accumulate the real pattern counts.
pub fn weight_consolidation(
    params: &mut ClassifierParams,
    snapshot: &mut HeadSnapshot,
    experience_classes: &BTreeSet<usize>,
    memory_classes: &BTreeSet<usize>,
    counts: &ConsolidationInputs,
    polarity: ReplayMode,
) -> Result<()> {
    let num_classes = params.num_classes();
    let touched: BTreeSet<usize> = experience_classes.union(memory_classes).copied().collect();

    for c in 0..num_classes {
        if !touched.contains(&c) {
            params.set_head_group(c, &snapshot.group(c));
            continue;
        }
        params.zero_mean_head_group(c);
        let seen_before = snapshot.past_counts[c] > 0;
        let in_experience = experience_classes.contains(&c);
        if in_experience {
            if seen_before {
                let current = *counts.current_real.get(&c).unwrap_or(&0);
                consolidate_group(params, snapshot, c, current)?;
            }
            // new class: keep the zero-meaned trained group
        } else {
            // replay-only class
            match polarity {
                ReplayMode::Positive => {
                    let current = *counts.current_replay.get(&c).unwrap_or(&0);
                    consolidate_group(params, snapshot, c, current)?;
                }
                ReplayMode::Negative => {
                    params.set_head_group(c, &snapshot.group(c));
                }
                ReplayMode::None => {
                    // no replay: memory_classes should be empty; treat a
                    // stray entry as negative (restore)
                    params.set_head_group(c, &snapshot.group(c));
                }
            }
        }
    }

    snapshot.w = params.head.w.clone();
    snapshot.b = params.head.b.clone();
    for (&c, &n) in &counts.current_real {
        snapshot.past_counts[c] += n;
    }
    Ok(())
}

fn consolidate_group(
    params: &mut ClassifierParams,
    snapshot: &HeadSnapshot,
    c: usize,
    current: u64,
) -> Result<()> {
    if current == 0 {
        return Err(Error::ZeroCurrentCount(c));
    }
    let w_past = (snapshot.past_counts[c] as f64 / current as f64).sqrt();
    let old = snapshot.group(c);
    let mut new = params.head_group(c);
    for (n, o) in new.iter_mut().zip(&old) {
        *n = (o * w_past + *n) / (w_past + 1.0);
    }
    params.set_head_group(c, &new);
    Ok(())
}
