//! Property tests for stream construction: every generated stream must
//! satisfy its scenario's set-algebra condition exactly (checked by an
//! independent reimplementation, not by validate_stream), and mutated
//! streams must be rejected.

use std::collections::BTreeSet;

use negrep_core::data::{
    build_stream, synth_dataset, validate_stream, Scenario, Stream, StreamLayout, SynthSpec,
    TestProtocol,
};
use proptest::prelude::*;

fn dataset(classes: usize, per_class: usize, seed: u64) -> negrep_core::data::Dataset {
    let spec = SynthSpec {
        classes,
        dims: 3,
        clusters_per_class: 1,
        train_per_class: per_class,
        test_per_class: 1,
        spread: 0.5,
        seed,
    };
    synth_dataset(&spec).unwrap().0
}

/// Independent check of the scenario conditions over raw label sets.
fn condition_holds(stream: &Stream) -> bool {
    let sets: Vec<BTreeSet<usize>> = stream
        .experiences
        .iter()
        .map(|e| e.labels.iter().copied().collect())
        .collect();
    match stream.scenario {
        // Y_1 ∩ Y_k = Y_k for every k
        Scenario::Ni => sets.iter().all(|s| {
            s.intersection(&sets[0]).count() == s.len()
        }),
        // Y_k ∩ (Y_1 ∪ ... ∪ Y_{k-1}) = ∅ for k >= 2
        Scenario::Nc => {
            let mut acc: BTreeSet<usize> = BTreeSet::new();
            for s in &sets {
                if s.intersection(&acc).next().is_some() {
                    return false;
                }
                acc.extend(s);
            }
            true
        }
        // ∃k with a revisit and ∃j with classes outside Y_1
        Scenario::Nic => {
            let mut acc: BTreeSet<usize> = BTreeSet::new();
            let mut revisit = false;
            for s in &sets {
                if s.intersection(&acc).next().is_some() {
                    revisit = true;
                }
                acc.extend(s);
            }
            let novel = sets.iter().any(|s| s.difference(&sets[0]).next().is_some());
            revisit && novel
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nc_streams_satisfy_their_condition(
        seed in 0u64..10_000,
        classes in 2usize..9,
        first in 1usize..4,
    ) {
        let first = first.min(classes - 1);
        let mut layout = vec![first];
        let mut left = classes - first;
        while left > 0 {
            let take = left.min(2);
            layout.push(take);
            left -= take;
        }
        let ds = dataset(classes, 4, seed);
        let stream = build_stream(
            &ds,
            Scenario::Nc,
            &StreamLayout::Nc { classes_per_experience: layout },
            TestProtocol::CumulativeFull,
            seed,
        ).unwrap();
        prop_assert!(condition_holds(&stream));
        prop_assert!(validate_stream(&stream).pass);
    }

    #[test]
    fn ni_streams_satisfy_their_condition(
        seed in 0u64..10_000,
        classes in 2usize..7,
        experiences in 1usize..5,
    ) {
        let ds = dataset(classes, experiences * 2, seed);
        let stream = build_stream(
            &ds,
            Scenario::Ni,
            &StreamLayout::Ni { experiences },
            TestProtocol::CumulativeFull,
            seed,
        ).unwrap();
        prop_assert!(condition_holds(&stream));
        prop_assert!(validate_stream(&stream).pass);
        // NI is stronger here: every experience holds every class
        for e in &stream.experiences {
            prop_assert_eq!(e.class_set().len(), classes);
        }
    }

    #[test]
    fn nic_streams_satisfy_their_condition(
        seed in 0u64..10_000,
        classes in 2usize..7,
        parts in 2usize..5,
    ) {
        let ds = dataset(classes, parts * 2, seed);
        let stream = build_stream(
            &ds,
            Scenario::Nic,
            &StreamLayout::NicSingleClass { parts_per_class: parts },
            TestProtocol::CumulativeFull,
            seed,
        ).unwrap();
        prop_assert!(condition_holds(&stream));
        prop_assert!(validate_stream(&stream).pass);
        prop_assert_eq!(stream.num_experiences(), classes * parts);
    }

    #[test]
    fn union_of_experiences_is_the_train_split(
        seed in 0u64..10_000,
        classes in 2usize..6,
    ) {
        let ds = dataset(classes, 5, seed);
        let stream = build_stream(
            &ds,
            Scenario::Nc,
            &StreamLayout::Nc { classes_per_experience: vec![1; classes] },
            TestProtocol::CumulativeFull,
            seed,
        ).unwrap();
        let total: usize = stream.experiences.iter().map(|e| e.len()).sum();
        prop_assert_eq!(total, ds.len());
        let mut a: Vec<u64> = ds
            .patterns()
            .iter()
            .flat_map(|p| p.values().iter().map(|v| v.to_bits()))
            .collect();
        let mut b: Vec<u64> = stream
            .experiences
            .iter()
            .flat_map(|e| e.patterns.iter())
            .flat_map(|p| p.values().iter().map(|v| v.to_bits()))
            .collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mutated_streams_are_rejected(
        seed in 0u64..10_000,
        classes in 3usize..7,
    ) {
        let ds = dataset(classes, 4, seed);
        // NC stream, then adversarially give a later experience a repeat
        let mut stream = build_stream(
            &ds,
            Scenario::Nc,
            &StreamLayout::Nc { classes_per_experience: vec![1; classes] },
            TestProtocol::CumulativeFull,
            seed,
        ).unwrap();
        let stolen = stream.experiences[0].clone();
        let k = stream.experiences.len() - 1;
        let mut patterns = stream.experiences[k].patterns.clone();
        let mut labels = stream.experiences[k].labels.clone();
        patterns.push(stolen.patterns[0].clone());
        labels.push(stolen.labels[0]);
        stream.experiences[k] =
            negrep_core::data::Experience::new(k + 1, patterns, labels).unwrap();
        let report = validate_stream(&stream);
        prop_assert!(!report.pass);
        prop_assert_eq!(report.first_violation, Some(k + 1));
    }
}
