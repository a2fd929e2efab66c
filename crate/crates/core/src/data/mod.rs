//! Datasets and continual-learning streams (NI / NC / NIC).

mod io;
mod stream;
mod synth;

pub use io::{load_dataset, save_dataset};
pub use stream::{build_stream, validate_stream, StreamLayout, ValidationReport};
pub use synth::synth_dataset;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labeled pattern collection; every pattern shares one shape and every
/// label is below `num_classes`.
#[derive(Debug, Clone)]
pub struct Dataset {
    patterns: Vec<Array>,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        patterns: Vec<Array>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if patterns.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} patterns but {} labels",
                patterns.len(),
                labels.len()
            )));
        }
        if let Some(first) = patterns.first() {
            if let Some(bad) = patterns.iter().find(|p| p.shape() != first.shape()) {
                return Err(Error::ShapeMismatch {
                    op: "Dataset::new",
                    detail: format!("{:?} vs {:?}", first.shape(), bad.shape()),
                });
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            patterns,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> &[Array] {
        &self.patterns
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn pattern_shape(&self) -> &[usize] {
        self.patterns
            .first()
            .map(|p| p.shape())
            .unwrap_or(&[] as &[usize])
    }

    pub fn dims(&self) -> usize {
        self.patterns.first().map(|p| p.len()).unwrap_or(0)
    }

    /// Row-major matrix of the selected patterns.
    pub fn batch(&self, indices: &[usize]) -> Array {
        let d = self.dims();
        let mut values = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            values.extend_from_slice(self.patterns[i].values());
        }
        Array::new(vec![indices.len(), d], values).expect("dataset patterns are finite")
    }
}

/// One element of the stream: the data visible during its training window.
#[derive(Debug, Clone)]
pub struct Experience {
    /// 1-based position in the stream.
    pub index: usize,
    pub patterns: Vec<Array>,
    pub labels: Vec<usize>,
    class_set: BTreeSet<usize>,
}

impl Experience {
    pub fn new(index: usize, patterns: Vec<Array>, labels: Vec<usize>) -> Result<Self> {
        if patterns.is_empty() || patterns.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "experience {index} must be nonempty with aligned labels"
            )));
        }
        let class_set = labels.iter().copied().collect();
        Ok(Experience {
            index,
            patterns,
            labels,
            class_set,
        })
    }

    pub fn class_set(&self) -> &BTreeSet<usize> {
        &self.class_set
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Array {
        let d = self.patterns[0].len();
        let mut values = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            values.extend_from_slice(self.patterns[i].values());
        }
        Array::new(vec![indices.len(), d], values).expect("experience patterns are finite")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Ni,
    Nc,
    Nic,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scenario::Ni => write!(f, "NI"),
            Scenario::Nc => write!(f, "NC"),
            Scenario::Nic => write!(f, "NIC"),
        }
    }
}

/// Evaluation regime: the full test set from the start, or only classes
/// seen so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestProtocol {
    CumulativeFull,
    Growing,
}

impl std::fmt::Display for TestProtocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TestProtocol::CumulativeFull => write!(f, "cumulative-full"),
            TestProtocol::Growing => write!(f, "growing"),
        }
    }
}

/// Ordered experiences under one scenario tag.
#[derive(Debug, Clone)]
pub struct Stream {
    pub scenario: Scenario,
    pub experiences: Vec<Experience>,
    pub test_protocol: TestProtocol,
}

impl Stream {
    pub fn num_experiences(&self) -> usize {
        self.experiences.len()
    }

    /// Classes present in experiences 1..=k.
    pub fn classes_up_to(&self, k: usize) -> BTreeSet<usize> {
        let mut s = BTreeSet::new();
        for e in self.experiences.iter().take(k) {
            s.extend(e.class_set().iter().copied());
        }
        s
    }
}

/// Parameters of the synthetic Gaussian-mixture dataset generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub dims: usize,
    pub clusters_per_class: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Per-sample standard deviation around each cluster center.
    pub spread: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0
            || self.dims == 0
            || self.clusters_per_class == 0
            || self.train_per_class == 0
            || self.test_per_class == 0
        {
            return Err(Error::InvalidArgument(
                "synth spec counts must be positive".to_string(),
            ));
        }
        if self.spread <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "synth spread must be > 0, got {}",
                self.spread
            )));
        }
        Ok(())
    }
}
