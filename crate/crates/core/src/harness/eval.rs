use std::collections::BTreeSet;

use crate::classifier::ClassifierParams;
use crate::data::{Dataset, TestProtocol};
use crate::error::{Error, Result};

/// Evaluation outcome: overall accuracy plus per-class accuracy (None for
/// classes with no eligible test rows).
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
}

/// Accuracy under the chosen protocol: `CumulativeFull` scores the whole
/// test set; `Growing` restricts to patterns of classes seen so far.
pub fn evaluate(
    params: &ClassifierParams,
    test: &Dataset,
    protocol: TestProtocol,
    seen_classes: &BTreeSet<usize>,
) -> Result<Evaluation> {
    let eligible: Vec<usize> = match protocol {
        TestProtocol::CumulativeFull => (0..test.len()).collect(),
        TestProtocol::Growing => (0..test.len())
            .filter(|&i| seen_classes.contains(&test.labels()[i]))
            .collect(),
    };
    if eligible.is_empty() {
        return Err(Error::EmptyTestSet(protocol.to_string()));
    }
    let batch = test.batch(&eligible);
    let predictions = params.predict(&batch)?;
    let mut correct = 0usize;
    let mut class_total = vec![0usize; test.num_classes()];
    let mut class_correct = vec![0usize; test.num_classes()];
    for (&i, &pred) in eligible.iter().zip(&predictions) {
        let truth = test.labels()[i];
        class_total[truth] += 1;
        if pred == truth {
            correct += 1;
            class_correct[truth] += 1;
        }
    }
    let per_class = class_total
        .iter()
        .zip(&class_correct)
        .map(|(&t, &c)| {
            if t == 0 {
                None
            } else {
                Some(c as f64 / t as f64)
            }
        })
        .collect();
    Ok(Evaluation {
        accuracy: correct as f64 / eligible.len() as f64,
        per_class,
    })
}
