use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::autodiff::seeded_rng;
use crate::data::{Dataset, Experience, Scenario, Stream, TestProtocol};
use crate::error::{Error, Result};

/// How the train split is dealt into experiences.
#[derive(Debug, Clone)]
pub enum StreamLayout {
    /// Every experience carries fresh instances of all classes.
    Ni { experiences: usize },
    /// Disjoint class groups; sizes may be unequal (e.g. a larger first
    /// experience). Must sum to the dataset's class count.
    Nc { classes_per_experience: Vec<usize> },
    /// Single-class experiences with revisits: each class's data is split
    /// into `parts_per_class` chunks and the chunk order is shuffled.
    NicSingleClass { parts_per_class: usize },
}

/// Per-class pattern indices, ascending.
fn indices_by_class(dataset: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); dataset.num_classes()];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

fn experience_from_indices(
    dataset: &Dataset,
    index: usize,
    indices: &[usize],
) -> Result<Experience> {
    let patterns = indices
        .iter()
        .map(|&i| dataset.patterns()[i].clone())
        .collect();
    let labels = indices.iter().map(|&i| dataset.labels()[i]).collect();
    Experience::new(index, patterns, labels)
}

/// Deal a dataset into an ordered stream under the given scenario layout.
/// Class order and within-class order are shuffled by `seed`.
pub fn build_stream(
    dataset: &Dataset,
    scenario: Scenario,
    layout: &StreamLayout,
    test_protocol: TestProtocol,
    seed: u64,
) -> Result<Stream> {
    let mut rng = seeded_rng(seed);
    let mut by_class = indices_by_class(dataset);
    for pool in &mut by_class {
        pool.shuffle(&mut rng);
    }

    let experiences = match (scenario, layout) {
        (Scenario::Ni, StreamLayout::Ni { experiences }) => {
            let n = *experiences;
            if n == 0 {
                return Err(Error::Layout("NI needs at least one experience".into()));
            }
            if let Some((c, pool)) = by_class.iter().enumerate().find(|(_, p)| p.len() < n) {
                return Err(Error::Layout(format!(
                    "NI over {n} experiences needs >= {n} patterns per class; class {c} has {}",
                    pool.len()
                )));
            }
            let mut exps = Vec::with_capacity(n);
            for k in 0..n {
                let mut idx = Vec::new();
                for pool in &by_class {
                    // contiguous chunk of the shuffled pool; chunks are disjoint
                    let chunk = pool.len() / n;
                    let start = k * chunk;
                    let end = if k == n - 1 { pool.len() } else { start + chunk };
                    idx.extend_from_slice(&pool[start..end]);
                }
                exps.push(experience_from_indices(dataset, k + 1, &idx)?);
            }
            exps
        }
        (Scenario::Nc, StreamLayout::Nc { classes_per_experience }) => {
            let sizes = classes_per_experience;
            let total: usize = sizes.iter().sum();
            if total != dataset.num_classes() {
                return Err(Error::Layout(format!(
                    "NC layout covers {total} classes but the dataset has {}",
                    dataset.num_classes()
                )));
            }
            if sizes.iter().any(|&s| s == 0) {
                return Err(Error::Layout("NC layout has an empty experience".into()));
            }
            let mut class_order: Vec<usize> = (0..dataset.num_classes()).collect();
            class_order.shuffle(&mut rng);
            let mut exps = Vec::with_capacity(sizes.len());
            let mut cursor = 0;
            for (k, &count) in sizes.iter().enumerate() {
                let classes = &class_order[cursor..cursor + count];
                cursor += count;
                let mut idx = Vec::new();
                for &c in classes {
                    idx.extend_from_slice(&by_class[c]);
                }
                if idx.is_empty() {
                    return Err(Error::Layout(format!(
                        "NC experience {} got classes with no data",
                        k + 1
                    )));
                }
                exps.push(experience_from_indices(dataset, k + 1, &idx)?);
            }
            exps
        }
        (Scenario::Nic, StreamLayout::NicSingleClass { parts_per_class }) => {
            let parts = *parts_per_class;
            if parts < 2 {
                return Err(Error::Layout(
                    "NIC revisits need parts_per_class >= 2".into(),
                ));
            }
            if dataset.num_classes() < 2 {
                return Err(Error::Layout("NIC needs at least two classes".into()));
            }
            if let Some((c, pool)) = by_class.iter().enumerate().find(|(_, p)| p.len() < parts) {
                return Err(Error::Layout(format!(
                    "NIC with {parts} parts needs >= {parts} patterns per class; class {c} has {}",
                    pool.len()
                )));
            }
            // one (class, chunk) pair per experience
            let mut chunks: Vec<(usize, Vec<usize>)> = Vec::new();
            for (c, pool) in by_class.iter().enumerate() {
                let chunk = pool.len() / parts;
                for p in 0..parts {
                    let start = p * chunk;
                    let end = if p == parts - 1 { pool.len() } else { start + chunk };
                    chunks.push((c, pool[start..end].to_vec()));
                }
            }
            chunks.shuffle(&mut rng);
            // Eq-5 shape: ensure some experience after the first repeats an
            // earlier class and some experience's class differs from the
            // first. Any shuffle of >= 2 parts per class and >= 2 classes
            // satisfies both; no fixing needed.
            chunks
                .into_iter()
                .enumerate()
                .map(|(k, (_, idx))| experience_from_indices(dataset, k + 1, &idx))
                .collect::<Result<Vec<_>>>()?
        }
        (tag, layout) => {
            return Err(Error::Layout(format!(
                "scenario {tag} is incompatible with layout {layout:?}"
            )));
        }
    };

    let stream = Stream {
        scenario,
        experiences,
        test_protocol,
    };
    let report = validate_stream(&stream);
    if !report.pass {
        return Err(Error::Layout(format!(
            "constructed stream violates its own scenario: {}",
            report.detail
        )));
    }
    Ok(stream)
}

/// Outcome of checking a stream against its declared scenario condition.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub pass: bool,
    /// 1-based index of the first experience violating the condition, when
    /// a single experience is attributable.
    pub first_violation: Option<usize>,
    pub detail: String,
}

impl ValidationReport {
    fn ok() -> Self {
        ValidationReport {
            pass: true,
            first_violation: None,
            detail: "ok".to_string(),
        }
    }

    fn fail(at: Option<usize>, detail: String) -> Self {
        ValidationReport {
            pass: false,
            first_violation: at,
            detail,
        }
    }
}

/// Check the formal condition of the stream's scenario tag.
pub fn validate_stream(stream: &Stream) -> ValidationReport {
    if stream.experiences.is_empty() {
        return ValidationReport::fail(None, "empty stream".to_string());
    }
    for (i, e) in stream.experiences.iter().enumerate() {
        if e.index != i + 1 {
            return ValidationReport::fail(
                Some(i + 1),
                format!("experience at position {} carries index {}", i + 1, e.index),
            );
        }
        if e.is_empty() {
            return ValidationReport::fail(Some(i + 1), format!("experience {} is empty", i + 1));
        }
    }
    match stream.scenario {
        Scenario::Ni => {
            // every experience's label set must be contained in the first's
            let first = stream.experiences[0].class_set().clone();
            for e in &stream.experiences {
                if !e.class_set().is_subset(&first) {
                    return ValidationReport::fail(
                        Some(e.index),
                        format!(
                            "NI violated: experience {} holds classes outside experience 1",
                            e.index
                        ),
                    );
                }
            }
            ValidationReport::ok()
        }
        Scenario::Nc => {
            let mut seen: BTreeSet<usize> = BTreeSet::new();
            for e in &stream.experiences {
                if e.index > 1 && !e.class_set().is_disjoint(&seen) {
                    return ValidationReport::fail(
                        Some(e.index),
                        format!("NC violated: experience {} repeats a seen class", e.index),
                    );
                }
                seen.extend(e.class_set().iter().copied());
            }
            ValidationReport::ok()
        }
        Scenario::Nic => {
            let mut seen: BTreeSet<usize> = BTreeSet::new();
            let mut revisit = false;
            for e in &stream.experiences {
                if e.index > 1 && !e.class_set().is_disjoint(&seen) {
                    revisit = true;
                }
                seen.extend(e.class_set().iter().copied());
            }
            let first = stream.experiences[0].class_set();
            let novel = stream
                .experiences
                .iter()
                .any(|e| !e.class_set().is_subset(first));
            if !revisit {
                return ValidationReport::fail(
                    None,
                    "NIC violated: no experience revisits a seen class".to_string(),
                );
            }
            if !novel {
                return ValidationReport::fail(
                    None,
                    "NIC violated: every experience's classes already sit in experience 1"
                        .to_string(),
                );
            }
            ValidationReport::ok()
        }
    }
}
