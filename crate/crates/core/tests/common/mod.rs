//! Shared fixtures: synthetic ground-truth machines and random corpora.
#![allow(dead_code)]

pub mod http;

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

use proofminer::efsm::Efsm;
use proofminer::guard::{Class, Prediction};
use proofminer::trace::{encode_step, Corpus, Trace, TraceEvent};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn ev(method: &str, params: &[&str], combined: bool) -> TraceEvent {
    encode_step(method, params, combined).unwrap()
}

/// A ground-truth transition: `method` with one parameter drawn from
/// `params` (or none if empty).
pub struct Edge {
    pub from: usize,
    pub method: String,
    pub params: Vec<String>,
    pub combined: bool,
    pub to: usize,
}

pub struct GroundTruth {
    pub states: usize,
    pub accepting: Vec<usize>,
    pub edges: Vec<Edge>,
}

fn edge(from: usize, method: &str, params: &[&str], combined: bool, to: usize) -> Edge {
    Edge {
        from,
        method: method.to_string(),
        params: params.iter().map(|p| p.to_string()).collect(),
        combined,
        to,
    }
}

impl GroundTruth {
    /// Five states, eight transitions, state 4 accepting.
    pub fn reference() -> Self {
        GroundTruth {
            states: 5,
            accepting: vec![4],
            edges: vec![
                edge(0, "intros", &[], false, 1),
                edge(0, "induction", &["n", "l"], false, 2),
                edge(1, "induction", &["n", "l", "m"], false, 2),
                edge(1, "destruct", &["b1", "b2"], true, 3),
                edge(2, "simpl", &["", "in H"], false, 3),
                edge(2, "trivial", &[], false, 4),
                edge(3, "rewrite", &["H", "<- IHn", "<- IHl"], false, 2),
                edge(3, "auto", &["with arith"], false, 4),
            ],
        }
    }

    /// The reference machine with every method prefixed, so copies share no labels.
    pub fn renamed(&self, prefix: &str) -> Self {
        GroundTruth {
            states: self.states,
            accepting: self.accepting.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    method: format!("{prefix}{}", e.method),
                    params: e.params.clone(),
                    ..*e
                })
                .collect(),
        }
    }

    /// A random walk from state 0 to an accepting state with no more than
    /// `max_len` events; too-long walks are resampled.
    pub fn sample(&self, rng: &mut ChaCha8Rng, max_len: usize) -> Vec<TraceEvent> {
        loop {
            let mut state = 0;
            let mut events = Vec::new();
            loop {
                let out: Vec<&Edge> = self.edges.iter().filter(|e| e.from == state).collect();
                let stop =
                    self.accepting.contains(&state) && (out.is_empty() || rng.random_bool(0.5));
                if stop || events.len() > max_len {
                    break;
                }
                let e = out.choose(rng).unwrap();
                let p = e.params.choose(rng).map(String::as_str).unwrap_or("");
                let params: Vec<&str> = if p.is_empty() { vec![] } else { vec![p] };
                events.push(ev(&e.method, &params, e.combined));
                state = e.to;
            }
            if events.len() <= max_len && self.accepting.contains(&state) {
                return events;
            }
        }
    }

    pub fn corpus(&self, n: usize, max_len: usize, seed: u64, name: &str) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traces = (0..n)
            .map(|i| Trace::positive(format!("{name}{i}"), self.sample(&mut rng, max_len)))
            .collect();
        Corpus::new(traces, name)
    }
}

/// Four label-disjoint machines of differing shape, pooled.
pub fn heterogeneous_corpus(n: usize, max_len: usize, seed: u64) -> Corpus {
    let machines = diverse_machines();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traces = (0..n)
        .map(|i| {
            let m = &machines[i % machines.len()];
            Trace::positive(format!("h{i}"), m.sample(&mut rng, max_len))
        })
        .collect();
    Corpus::new(traces, "heterogeneous")
}

pub fn diverse_machines() -> Vec<GroundTruth> {
    let params: Vec<String> = (0..8).map(|i| format!("x{i}")).collect();
    let params: Vec<&str> = params.iter().map(String::as_str).collect();
    (0..4)
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + m as u64);
            let states = 7;
            let mut edges = Vec::new();
            // A spine guarantees every state can reach the accepting one.
            for s in 0..states - 1 {
                edges.push(edge(s, &format!("t{m}s{s}"), &params, false, s + 1));
            }
            for j in 0..8 {
                let from = rng.random_range(0..states - 1);
                let to = rng.random_range(0..states);
                edges.push(edge(
                    from,
                    &format!("t{m}x{j}"),
                    &params,
                    rng.random_bool(0.3),
                    to,
                ));
            }
            GroundTruth {
                states,
                accepting: vec![states - 1],
                edges,
            }
        })
        .collect()
}

/// Random label sequences over a small alphabet with random parameters.
pub fn random_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let methods = [
        "intros",
        "induction",
        "simpl",
        "rewrite",
        "auto",
        "destruct",
    ];
    let values = ["n", "m", "H", "<- IHn", "in H"];
    let traces = (0..n)
        .map(|i| {
            let len = rng.random_range(1..=10);
            let events = (0..len)
                .map(|_| {
                    let m = methods.choose(&mut rng).unwrap();
                    let arity = rng.random_range(0..=2);
                    let ps: Vec<&str> = (0..arity)
                        .map(|_| *values.choose(&mut rng).unwrap())
                        .collect();
                    ev(m, &ps, rng.random_bool(0.2))
                })
                .collect();
            Trace::positive(format!("r{i}"), events)
        })
        .collect();
    Corpus::new(traces, "random")
}

/// Guard violations recounted from the transition list alone.
pub fn naive_violations(model: &Efsm) -> usize {
    let ts = model.transitions();
    let mut count = 0;
    for t in ts {
        for v in t.witnesses.keys() {
            let ok = match model.guards().predict(&t.label, v) {
                Prediction::UnknownLabel => true,
                Prediction::Class(Class::End) => model.accepting().contains(&t.target),
                Prediction::Class(Class::Next(l)) => {
                    ts.iter().any(|u| u.source == t.target && u.label == l)
                }
            };
            if !ok {
                count += 1;
            }
        }
    }
    count
}

/// No state has two outgoing transitions with the same label.
pub fn naive_label_deterministic(model: &Efsm) -> bool {
    let mut seen = HashSet::new();
    model
        .transitions()
        .iter()
        .all(|t| seen.insert((t.source, t.label.clone())))
}

/// Label-only acceptance for a label-deterministic model, by linear scans.
pub fn naive_control_accepts(model: &Efsm, trace: &Trace) -> bool {
    let mut cur = model.initial();
    for e in &trace.events {
        match model
            .transitions()
            .iter()
            .find(|t| t.source == cur && t.label == e.label)
        {
            Some(t) => cur = t.target,
            None => return false,
        }
    }
    model.accepting().contains(&cur)
}

pub fn label_sequence(trace: &Trace) -> Vec<String> {
    trace.events.iter().map(|e| e.label.to_string()).collect()
}

pub fn fixture_corpus(name: &str) -> Corpus {
    let (corpus, summary) = proofminer::parser::parse_corpus(&[fixture(name)]).unwrap();
    assert_eq!(summary.proofs_skipped, 0, "{name}");
    corpus
}

/// The ListNat fixture minus `app_nil_l`, inferred with default settings.
pub fn listnat_model() -> Efsm {
    let corpus = fixture_corpus("listnat.v").without("app_nil_l").unwrap();
    proofminer::inference::infer(&corpus, &Default::default()).unwrap()
}

/// The Bool fixture minus `negb_orb`, inferred with default settings.
pub fn bool_model() -> Efsm {
    let corpus = fixture_corpus("bool.v").without("negb_orb").unwrap();
    proofminer::inference::infer(&corpus, &Default::default()).unwrap()
}

/// Method names offered by a set of labels, `_0` suffix stripped.
pub fn methods<'a>(
    labels: impl IntoIterator<Item = &'a proofminer::trace::Label>,
) -> BTreeSet<String> {
    labels.into_iter().map(|l| l.method().to_string()).collect()
}
