//! Replay memory and minibatch composition. Entries live at the latent
//! cut; provenance records whether they are stored originals, generator
//! output, or uniform random probes.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{seeded_rng, Array};
use crate::data::Experience;
use crate::error::{Error, Result};
use crate::generator::{generate_batch, DecoderSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Original,
    Generated,
    Random,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Original => write!(f, "original"),
            Provenance::Generated => write!(f, "generated"),
            Provenance::Random => write!(f, "random"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayEntry {
    pub pattern: Vec<f64>,
    pub label: usize,
    pub provenance: Provenance,
}

/// Fixed-capacity store of latent patterns from previously seen classes.
/// Each population call rebuilds the contents from scratch.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    entries: Vec<ReplayEntry>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        ReplayMemory {
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    /// Distinct labels currently stored.
    pub fn class_set(&self) -> BTreeSet<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    /// Fill to capacity with decoder output conditioned on labels drawn
    /// uniformly from the seen-class set. Previous contents are discarded.
    pub fn populate_generated(
        &mut self,
        src: DecoderSource,
        seen: &BTreeSet<usize>,
        seed: u64,
    ) -> Result<()> {
        if seen.is_empty() {
            return Err(Error::EmptySeenSet);
        }
        let seen: Vec<usize> = seen.iter().copied().collect();
        let mut rng = seeded_rng(seed);
        let labels: Vec<usize> = (0..self.capacity)
            .map(|_| seen[rng.gen_range(0..seen.len())])
            .collect();
        let patterns = generate_batch(src, &labels, rng.gen())?;
        self.entries = labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| ReplayEntry {
                pattern: patterns.row(i).to_vec(),
                label,
                provenance: Provenance::Generated,
            })
            .collect();
        Ok(())
    }

    /// Class-balanced draw over all stored past latent patterns: one pass
    /// per class round-robin until the capacity (or the supply) runs out,
    /// so per-class counts differ by at most one when availability permits.
    pub fn populate_original(&mut self, history: &[(Vec<f64>, usize)], seed: u64) -> Result<()> {
        if history.is_empty() {
            return Err(Error::EmptyHistory);
        }
        let mut rng = seeded_rng(seed);
        let classes: BTreeSet<usize> = history.iter().map(|&(_, l)| l).collect();
        let mut pools: Vec<(usize, Vec<usize>)> = classes
            .iter()
            .map(|&c| {
                let mut idx: Vec<usize> = history
                    .iter()
                    .enumerate()
                    .filter(|(_, &(_, l))| l == c)
                    .map(|(i, _)| i)
                    .collect();
                idx.shuffle(&mut rng);
                (c, idx)
            })
            .collect();
        self.entries.clear();
        let mut depth = 0;
        while self.entries.len() < self.capacity {
            let mut any = false;
            for (_, pool) in &mut pools {
                if self.entries.len() >= self.capacity {
                    break;
                }
                if let Some(&i) = pool.get(depth) {
                    any = true;
                    self.entries.push(ReplayEntry {
                        pattern: history[i].0.clone(),
                        label: history[i].1,
                        provenance: Provenance::Original,
                    });
                }
            }
            if !any {
                break;
            }
            depth += 1;
        }
        Ok(())
    }

    /// Fill with uniform random vectors in [0, p90] of the probe's pooled
    /// activation values (nearest-rank percentile), labeled uniformly over
    /// the seen classes.
    pub fn populate_random(
        &mut self,
        probe: &Array,
        seen: &BTreeSet<usize>,
        seed: u64,
    ) -> Result<()> {
        if probe.is_empty() {
            return Err(Error::EmptyProbe);
        }
        if seen.is_empty() {
            return Err(Error::EmptySeenSet);
        }
        let p90 = nearest_rank_percentile(probe.values(), 90.0);
        let width = probe.cols();
        let seen: Vec<usize> = seen.iter().copied().collect();
        let mut rng = seeded_rng(seed);
        self.entries = (0..self.capacity)
            .map(|_| {
                let pattern: Vec<f64> = (0..width)
                    .map(|_| if p90 > 0.0 { rng.gen_range(0.0..=p90) } else { 0.0 })
                    .collect();
                ReplayEntry {
                    pattern,
                    label: seen[rng.gen_range(0..seen.len())],
                    provenance: Provenance::Random,
                }
            })
            .collect();
        Ok(())
    }

    /// Debug dump: the dataset record format with a trailing provenance
    /// column.
    pub fn dump(&self, path: &Path, num_classes: usize) -> Result<()> {
        let width = self.entries.first().map(|e| e.pattern.len()).unwrap_or(0);
        let mut out = String::new();
        out.push_str(&format!(
            "NEGREP-MEM v1; C={num_classes}; dims={width}; n={}\n",
            self.entries.len()
        ));
        for e in &self.entries {
            out.push_str(&e.label.to_string());
            for v in &e.pattern {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push(',');
            out.push_str(&e.provenance.to_string());
            out.push('\n');
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Nearest-rank percentile of the pooled values: the ceil(p/100 * n)-th
/// smallest (1-based).
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Minibatch shape: `replay_per_batch` memory rows and `batch_size -
/// replay_per_batch` current rows per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MinibatchPlan {
    pub batch_size: usize,
    pub replay_per_batch: usize,
}

impl MinibatchPlan {
    pub fn new(batch_size: usize, replay_per_batch: usize) -> Result<Self> {
        if batch_size == 0 || replay_per_batch >= batch_size {
            return Err(Error::InvalidArgument(format!(
                "minibatch plan needs 0 <= replay ({replay_per_batch}) < batch ({batch_size})"
            )));
        }
        Ok(MinibatchPlan {
            batch_size,
            replay_per_batch,
        })
    }

    pub fn current_per_batch(&self) -> usize {
        self.batch_size - self.replay_per_batch
    }
}

/// A composed training minibatch. Current rows are raw inputs; replay rows
/// are latent patterns injected at the cut. The split is the per-pattern
/// origin flag.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub current_patterns: Array,
    pub current_labels: Vec<usize>,
    /// `[r, cut]`; empty (0 rows) when the plan has no replay.
    pub replay_patterns: Array,
    pub replay_labels: Vec<usize>,
    /// Label set of the whole memory, the class-level mask target.
    pub replay_classes: BTreeSet<usize>,
}

impl Minibatch {
    pub fn num_rows(&self) -> usize {
        self.current_labels.len() + self.replay_labels.len()
    }

    pub fn union_labels(&self) -> Vec<usize> {
        let mut l = self.current_labels.clone();
        l.extend_from_slice(&self.replay_labels);
        l
    }
}

/// Draw memory rows uniformly without replacement; reshuffles when the
/// pass is exhausted (an epoch can need more draws than the memory holds).
struct MemorySampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl MemorySampler {
    fn new(len: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        MemorySampler { order, pos: 0, rng }
    }

    fn next(&mut self) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }
}

/// Compose one epoch of minibatches: the experience's data shuffled and
/// chunked into `batch_size - replay_per_batch` rows, each chunk joined
/// with `replay_per_batch` memory rows.
pub fn compose_epoch(
    memory: &ReplayMemory,
    experience: &Experience,
    plan: &MinibatchPlan,
    seed: u64,
) -> Result<Vec<Minibatch>> {
    let r = plan.replay_per_batch;
    if r > 0 && memory.is_empty() {
        return Err(Error::EmptyMemory(r));
    }
    let mut rng = seeded_rng(seed);
    let mut order: Vec<usize> = (0..experience.len()).collect();
    order.shuffle(&mut rng);
    let mut sampler = if r > 0 {
        Some(MemorySampler::new(memory.len(), rng.gen()))
    } else {
        None
    };
    let cut = memory.entries().first().map(|e| e.pattern.len()).unwrap_or(0);
    let replay_classes = memory.class_set();

    let per = plan.current_per_batch();
    let mut batches = Vec::new();
    for chunk in order.chunks(per) {
        let current_patterns = experience.batch(chunk);
        let current_labels: Vec<usize> = chunk.iter().map(|&i| experience.labels[i]).collect();
        let (replay_patterns, replay_labels) = if let Some(s) = sampler.as_mut() {
            let mut values = Vec::with_capacity(r * cut);
            let mut labels = Vec::with_capacity(r);
            for _ in 0..r {
                let e = &memory.entries()[s.next()];
                values.extend_from_slice(&e.pattern);
                labels.push(e.label);
            }
            (Array::new(vec![r, cut], values)?, labels)
        } else {
            (Array::zeros(vec![0, cut]), Vec::new())
        };
        batches.push(Minibatch {
            current_patterns,
            current_labels,
            replay_patterns,
            replay_labels,
            replay_classes: replay_classes.clone(),
        });
    }
    Ok(batches)
}

/// Single-batch form: the first minibatch of an epoch with exactly
/// `batch_size - r` current and `r` replay rows (errors if the experience
/// cannot fill a whole batch).
pub fn compose_minibatch(
    memory: &ReplayMemory,
    experience: &Experience,
    plan: &MinibatchPlan,
    seed: u64,
) -> Result<Minibatch> {
    if experience.len() < plan.current_per_batch() {
        return Err(Error::InvalidArgument(format!(
            "experience holds {} patterns, plan needs {}",
            experience.len(),
            plan.current_per_batch()
        )));
    }
    let mut batches = compose_epoch(memory, experience, plan, seed)?;
    Ok(batches.remove(0))
}
