mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use common::{ev, fixture_corpus, random_corpus, GroundTruth};
use proofminer::efsm::{walk, AcceptMode};
use proofminer::evaluation::{
    build_negatives, cross_validate, make_folds, metrics, run_experiment, ConfusionMatrix,
    EvalError, Experiment,
};
use proofminer::inference::{infer, InferenceConfig};
use proofminer::trace::{Corpus, Polarity, Trace, TraceEvent};
use proptest::prelude::*;

fn matrix(tp: usize, fn_: usize, tn: usize, fp: usize) -> ConfusionMatrix {
    ConfusionMatrix { tp, tn, fp, fn_ }
}

#[test]
fn metrics_match_the_listnat_row() {
    let m = metrics(&matrix(84, 16, 81, 19));
    assert_eq!(m.sensitivity, Some(84.0 / (84.0 + 16.0)));
    assert_eq!(m.specificity, Some(81.0 / (81.0 + 19.0)));
    assert_eq!(m.sensitivity, Some(0.84));
    assert_eq!(m.specificity, Some(0.81));
}

#[test]
fn zero_denominators_are_undefined() {
    let m = metrics(&matrix(0, 0, 0, 0));
    assert_eq!((m.sensitivity, m.specificity), (None, None));
    let m = metrics(&matrix(0, 3, 0, 0));
    assert_eq!((m.sensitivity, m.specificity), (Some(0.0), None));
    let m = metrics(&matrix(0, 0, 0, 2));
    assert_eq!((m.sensitivity, m.specificity), (None, Some(0.0)));
}

fn named(n: usize) -> Corpus {
    Corpus::new(
        (0..n)
            .map(|i| Trace::positive(format!("t{i}"), vec![ev("auto", &[], false)]))
            .collect(),
        "n",
    )
}

#[test]
fn fold_count_is_validated() {
    assert!(matches!(
        make_folds(&named(5), 1, 0),
        Err(EvalError::TooFewFolds(1))
    ));
    assert!(matches!(
        make_folds(&named(5), 6, 0),
        Err(EvalError::TooManyFolds { k: 6, traces: 5 })
    ));
    assert!(make_folds(&named(5), 5, 0).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_the_corpus(n in 2usize..150, k in 2usize..20, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let corpus = named(n);
        let plan = make_folds(&corpus, k, seed).unwrap();

        let names: BTreeSet<&str> = corpus.traces().iter().map(|t| t.name.as_str()).collect();
        let assigned: BTreeSet<&str> = plan.assignment.keys().map(String::as_str).collect();
        prop_assert_eq!(&assigned, &names);

        let mut seen = BTreeSet::new();
        let mut sizes = vec![0; k];
        for (i, size) in sizes.iter_mut().enumerate() {
            for t in plan.fold(&corpus, i) {
                prop_assert!(seen.insert(t.name.clone()), "{} in two folds", t.name);
                *size += 1;
            }
        }
        prop_assert_eq!(seen.len(), n);
        prop_assert_eq!(&sizes, &plan.sizes());
        let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert!(lo >= 1);

        prop_assert_eq!(&make_folds(&corpus, k, seed).unwrap(), &plan);
    }

    #[test]
    fn guarded_acceptance_implies_control_acceptance(seed in 0u64..100) {
        let train = random_corpus(40, seed);
        let model = infer(&train, &InferenceConfig::default()).unwrap();
        for t in random_corpus(40, seed + 1000).traces() {
            if walk(&model, t, AcceptMode::Guarded).accepted() {
                prop_assert!(walk(&model, t, AcceptMode::ControlOnly).accepted());
            }
        }
    }
}

fn events_of(t: &Trace) -> Vec<TraceEvent> {
    t.events.clone()
}

fn multiset(t: &Trace) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for e in &t.events {
        *m.entry(format!("{e:?}")).or_default() += 1;
    }
    m
}

#[test]
fn negatives_are_unseen_permutations_or_foreign_traces() {
    let corpus = GroundTruth::reference().corpus(60, 12, 4, "g");
    let foreign = fixture_corpus("bool.v");
    let negatives = build_negatives(&corpus, &foreign, 30, 8).unwrap();
    assert_eq!(negatives.len(), 30);

    let training: HashSet<Vec<TraceEvent>> = corpus.traces().iter().map(events_of).collect();
    let foreign_events: HashSet<Vec<TraceEvent>> = foreign.traces().iter().map(events_of).collect();
    let mut from_foreign = 0;
    let mut names = HashSet::new();
    for n in &negatives {
        assert_eq!(n.polarity, Polarity::Negative);
        assert!(names.insert(n.name.clone()), "duplicate name {}", n.name);
        assert!(
            !training.contains(&n.events),
            "{} is a training trace",
            n.name
        );
        if foreign_events.contains(&n.events) {
            from_foreign += 1;
        } else {
            let origin = corpus
                .traces()
                .iter()
                .find(|t| multiset(t) == multiset(n) && t.events != n.events);
            assert!(origin.is_some(), "{} is not a permutation", n.name);
        }
    }
    assert!(from_foreign > 0 && from_foreign < 30, "{from_foreign}");
}

#[test]
fn permutations_already_in_the_corpus_are_redrawn() {
    let ab = Trace::positive("ab", vec![ev("a", &[], false), ev("b", &[], false)]);
    let ba = Trace::positive("ba", vec![ev("b", &[], false), ev("a", &[], false)]);
    let symmetric = Corpus::new(vec![ab.clone(), ba.clone()], "s");
    assert!(matches!(
        build_negatives(&symmetric, &Corpus::default(), 3, 0),
        Err(EvalError::InsufficientNegatives {
            wanted: 3,
            found: 0
        })
    ));

    let abc = Trace::positive(
        "abc",
        vec![
            ev("a", &[], false),
            ev("b", &[], false),
            ev("c", &[], false),
        ],
    );
    let corpus = Corpus::new(vec![ab, ba, abc.clone()], "s");
    let negatives = build_negatives(&corpus, &Corpus::default(), 10, 0).unwrap();
    for n in &negatives {
        assert_eq!(multiset(n), multiset(&abc));
        assert_ne!(n.events, abc.events);
    }
}

#[test]
fn negative_requests_are_validated() {
    let corpus = GroundTruth::reference().corpus(10, 12, 4, "g");
    assert!(matches!(
        build_negatives(&corpus, &Corpus::default(), 0, 0),
        Err(EvalError::NoNegativesRequested)
    ));
    let plan = make_folds(&corpus, 2, 0).unwrap();
    assert!(matches!(
        cross_validate(
            &corpus,
            &[],
            &plan,
            &InferenceConfig::default(),
            AcceptMode::Guarded
        ),
        Err(EvalError::NoNegatives)
    ));
}

#[test]
fn negatives_are_reproducible_per_seed() {
    let corpus = GroundTruth::reference().corpus(60, 12, 4, "g");
    let a = build_negatives(&corpus, &Corpus::default(), 30, 5).unwrap();
    let b = build_negatives(&corpus, &Corpus::default(), 30, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn every_fold_sees_the_same_negative_pool() {
    let corpus = GroundTruth::reference().corpus(50, 12, 6, "g");
    let report = run_experiment(&corpus, &Corpus::default(), &Experiment::default()).unwrap();
    assert_eq!(report.folds.len(), 5);
    let mut evaluated = 0;
    for f in &report.folds {
        assert_eq!(f.matrix.tn + f.matrix.fp, report.negatives);
        assert_eq!(f.matrix.tp + f.matrix.fn_, f.evaluation_traces);
        assert_eq!(f.training_traces + f.evaluation_traces, corpus.len());
        evaluated += f.evaluation_traces;
    }
    assert_eq!(evaluated, corpus.len());
    assert_eq!(report.proofs, 50);
    assert_eq!(report.lines, corpus.event_count());
}

#[test]
fn means_average_the_defined_folds() {
    let corpus = GroundTruth::reference().corpus(50, 12, 6, "g");
    let report = run_experiment(&corpus, &Corpus::default(), &Experiment::default()).unwrap();
    let sens: Vec<f64> = report.folds.iter().filter_map(|f| f.sensitivity).collect();
    let spec: Vec<f64> = report.folds.iter().filter_map(|f| f.specificity).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert_eq!(report.mean_sensitivity, Some(mean(&sens)));
    assert_eq!(report.mean_specificity, Some(mean(&spec)));
}

#[test]
fn experiments_are_reproducible() {
    let corpus = fixture_corpus("listnat.v");
    let foreign = fixture_corpus("bool.v");
    let experiment = Experiment {
        k: 3,
        negatives: 12,
        seed: 42,
        ..Experiment::default()
    };
    let a = run_experiment(&corpus, &foreign, &experiment).unwrap();
    let b = run_experiment(&corpus, &foreign, &experiment).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.to_table(), b.to_table());
}

#[test]
fn report_json_carries_the_settings() {
    let corpus = GroundTruth::reference().corpus(20, 12, 6, "g");
    let experiment = Experiment {
        k: 4,
        negatives: 10,
        seed: 3,
        mode: AcceptMode::ControlOnly,
        ..Experiment::default()
    };
    let report = run_experiment(&corpus, &Corpus::default(), &experiment).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(v["k"], 4);
    assert_eq!(v["seed"], 3);
    assert_eq!(v["mode"], "control-only");
    assert_eq!(v["negatives"], 10);
    assert_eq!(v["folds"].as_array().unwrap().len(), 4);
    assert!(v["folds"][0]["matrix"].get("fn").is_some());
    assert!(v["config"].get("mergeThreshold").is_some());
}
