//! Guard-constrained Blue-Fringe state merging.
//!
//! Inference learns the guard trees, builds the prefix tree, makes it
//! label-deterministic and then runs Blue-Fringe with EDSM scoring. Every
//! state carries the set of successor classes that the guards predict for
//! the data arriving on its incoming transitions (the initial state carries
//! a start marker instead). Two states may only be identified, directly or
//! by the folding a merge forces, if those sets intersect: data routed by
//! the guards to disjoint continuations marks different proof situations.
//! A committed merge must also leave the guard violation count no higher
//! than before.
//!
//! The original EFSM inference tool describes its Blue-Fringe variant only
//! as "augmented"; the compatibility rule above is this crate's
//! reconstruction of how guards constrain merging.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efsm::{build_pta, Efsm, StateId, Transition, Witnesses};
use crate::guard::{Class, GuardError, GuardModel, InfoGainTree, Prediction};
use crate::trace::{Corpus, Label, ParamVector};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InferenceError {
    #[error("corpus has no positive traces")]
    EmptyCorpus,
    #[error("state {0} does not exist")]
    UnknownState(usize),
    #[error("states {0} and {1} cannot be merged: {2}")]
    Incompatible(usize, usize, String),
    #[error(transparent)]
    Guard(#[from] GuardError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Minimum EDSM score for a merge to be committed.
    pub merge_threshold: usize,
    /// Minimum leaf size passed to the guard tree learner.
    pub min_leaf: usize,
    /// Reserved; the algorithm itself is deterministic.
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            merge_threshold: 0,
            min_leaf: 1,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

/// What a state's incoming data tells the guards about its continuation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Arrival {
    Start,
    Predicted(Class),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Witness {
    count: usize,
    /// Cached guard prediction for this (label, parameters) pair.
    predicted: Option<Class>,
}

#[derive(Debug, Clone)]
struct Edge {
    label: Label,
    target: usize,
    witnesses: BTreeMap<ParamVector, Witness>,
}

/// Mutable working form of a model. Edges of a state may share labels until
/// the machine is determinized.
#[derive(Debug, Clone)]
struct Machine {
    edges: Vec<Vec<Edge>>,
    accepting: Vec<bool>,
    arrivals: Vec<BTreeSet<Arrival>>,
}

impl Machine {
    fn from_efsm(model: &Efsm) -> Self {
        let n = model.state_count();
        let mut edges: Vec<Vec<Edge>> = vec![Vec::new(); n];
        let mut arrivals = vec![BTreeSet::new(); n];
        arrivals[0].insert(Arrival::Start);
        let guards = model.guards();
        for t in model.transitions() {
            let witnesses: BTreeMap<ParamVector, Witness> = t
                .witnesses
                .iter()
                .map(|(v, &count)| {
                    let predicted = match guards.predict(&t.label, v) {
                        Prediction::Class(c) => Some(c),
                        Prediction::UnknownLabel => None,
                    };
                    (v.clone(), Witness { count, predicted })
                })
                .collect();
            arrivals[t.target.0].extend(
                witnesses
                    .values()
                    .filter_map(|w| w.predicted.clone().map(Arrival::Predicted)),
            );
            edges[t.source.0].push(Edge {
                label: t.label.clone(),
                target: t.target.0,
                witnesses,
            });
        }
        Machine {
            accepting: model.states().map(|s| model.is_accepting(s)).collect(),
            edges,
            arrivals,
        }
    }

    fn len(&self) -> usize {
        self.edges.len()
    }

    fn to_efsm(&self, guards: &Arc<GuardModel>) -> Efsm {
        let transitions = self
            .edges
            .iter()
            .enumerate()
            .flat_map(|(s, edges)| {
                edges.iter().map(move |e| Transition {
                    source: StateId(s),
                    label: e.label.clone(),
                    target: StateId(e.target),
                    witnesses: e
                        .witnesses
                        .iter()
                        .map(|(v, w)| (v.clone(), w.count))
                        .collect::<Witnesses>(),
                })
            })
            .collect();
        let accepting = (0..self.len())
            .filter(|&s| self.accepting[s])
            .map(StateId)
            .collect();
        Efsm::new(self.len(), accepting, transitions, Arc::clone(guards))
            .expect("working machine stays connected")
    }

    /// Same count as [`Efsm::guard_violations`], using cached predictions.
    fn violations(&self) -> usize {
        let mut total = 0;
        for edges in &self.edges {
            for e in edges {
                for w in e.witnesses.values() {
                    let ok = match &w.predicted {
                        None => true,
                        Some(Class::End) => self.accepting[e.target],
                        Some(Class::Next(l)) => self.edges[e.target].iter().any(|x| &x.label == l),
                    };
                    total += usize::from(!ok);
                }
            }
        }
        total
    }

    /// Collapses every fold class into one state. New ids follow the order
    /// of the smallest member, so state 0 stays initial. Returns the old->new map.
    fn quotient(&self, fold: &Fold<'_>) -> (Machine, Vec<usize>) {
        let reps: Vec<usize> = (0..self.len()).map(|s| fold.find(s)).collect();
        let mut new_id = vec![usize::MAX; self.len()];
        let mut count = 0;
        for s in 0..self.len() {
            if reps[s] == s {
                new_id[s] = count;
                count += 1;
            }
        }
        let remap: Vec<usize> = reps.iter().map(|&r| new_id[r]).collect();

        let mut accepting = vec![false; count];
        let mut arrivals = vec![BTreeSet::new(); count];
        let mut out: Vec<BTreeMap<(Label, usize), BTreeMap<ParamVector, Witness>>> =
            vec![BTreeMap::new(); count];
        for s in 0..self.len() {
            let c = remap[s];
            accepting[c] |= self.accepting[s];
            arrivals[c].extend(self.arrivals[s].iter().cloned());
            for e in &self.edges[s] {
                let slot = out[c]
                    .entry((e.label.clone(), remap[e.target]))
                    .or_default();
                for (v, w) in &e.witnesses {
                    slot.entry(v.clone())
                        .and_modify(|x| x.count += w.count)
                        .or_insert_with(|| w.clone());
                }
            }
        }
        let edges = out
            .into_iter()
            .map(|m| {
                m.into_iter()
                    .map(|((label, target), witnesses)| Edge {
                        label,
                        target,
                        witnesses,
                    })
                    .collect()
            })
            .collect();
        (
            Machine {
                edges,
                accepting,
                arrivals,
            },
            remap,
        )
    }
}

#[derive(Debug, Clone)]
struct ClassInfo {
    out: BTreeMap<Label, usize>,
    accepting: bool,
    arrivals: BTreeSet<Arrival>,
}

fn compatible(a: &ClassInfo, b: &ClassInfo) -> bool {
    a.arrivals.is_empty() || b.arrivals.is_empty() || !a.arrivals.is_disjoint(&b.arrivals)
}

/// Union-find overlay over a machine. Only classes touched by a fold are
/// materialized, so scoring a candidate costs time proportional to the
/// region it folds.
struct Fold<'m> {
    machine: &'m Machine,
    parent: HashMap<usize, usize>,
    classes: HashMap<usize, ClassInfo>,
    pending: Vec<(usize, usize)>,
    score: usize,
    check: bool,
}

struct Conflict {
    left: usize,
    right: usize,
}

impl<'m> Fold<'m> {
    fn new(machine: &'m Machine, check: bool) -> Self {
        Fold {
            machine,
            parent: HashMap::new(),
            classes: HashMap::new(),
            pending: Vec::new(),
            score: 0,
            check,
        }
    }

    fn find(&self, mut x: usize) -> usize {
        while let Some(&p) = self.parent.get(&x) {
            x = p;
        }
        x
    }

    /// Materializes an untouched state's class. Duplicate labels queue
    /// forced folds.
    fn ensure(&mut self, rep: usize) {
        if self.classes.contains_key(&rep) {
            return;
        }
        let mut out = BTreeMap::new();
        for e in &self.machine.edges[rep] {
            if let Some(&other) = out.get(&e.label) {
                self.pending.push((other, e.target));
            } else {
                out.insert(e.label.clone(), e.target);
            }
        }
        self.classes.insert(
            rep,
            ClassInfo {
                out,
                accepting: self.machine.accepting[rep],
                arrivals: self.machine.arrivals[rep].clone(),
            },
        );
    }

    fn unify(&mut self, a: usize, b: usize) -> Result<(), Conflict> {
        self.pending.push((a, b));
        self.drain()
    }

    fn drain(&mut self) -> Result<(), Conflict> {
        while let Some((x, y)) = self.pending.pop() {
            let (rx, ry) = (self.find(x), self.find(y));
            if rx == ry {
                continue;
            }
            self.ensure(rx);
            self.ensure(ry);
            if self.check && !compatible(&self.classes[&rx], &self.classes[&ry]) {
                return Err(Conflict {
                    left: rx,
                    right: ry,
                });
            }
            let (keep, gone) = if rx < ry { (rx, ry) } else { (ry, rx) };
            let gone_info = self.classes.remove(&gone).expect("materialized");
            self.parent.insert(gone, keep);
            let keep_info = self.classes.get_mut(&keep).expect("materialized");
            keep_info.accepting |= gone_info.accepting;
            keep_info.arrivals.extend(gone_info.arrivals);
            for (label, t) in gone_info.out {
                match keep_info.out.get(&label) {
                    Some(&t2) => {
                        self.score += 1;
                        self.pending.push((t2, t));
                    }
                    None => {
                        keep_info.out.insert(label, t);
                    }
                }
            }
        }
        Ok(())
    }

    /// Folds every same-label pair in the machine until it is label-deterministic.
    fn determinize_all(&mut self) {
        for s in 0..self.machine.len() {
            let rep = self.find(s);
            self.ensure(rep);
            let _ = self.drain();
        }
    }
}

fn check_state(model: &Efsm, s: StateId) -> Result<usize, InferenceError> {
    if s.0 < model.state_count() {
        Ok(s.0)
    } else {
        Err(InferenceError::UnknownState(s.0))
    }
}

/// EDSM score of identifying `a` and `b`: the number of same-labeled
/// transition pairs the fold overlays. `None` when the fold would identify
/// states whose guard-predicted continuations are disjoint.
pub fn score_merge(model: &Efsm, a: StateId, b: StateId) -> Result<Option<usize>, InferenceError> {
    let (a, b) = (check_state(model, a)?, check_state(model, b)?);
    let machine = Machine::from_efsm(model);
    let mut fold = Fold::new(&machine, true);
    Ok(fold.unify(a, b).ok().map(|()| fold.score))
}

/// Number of (transition, witness) pairs whose guard-predicted successor is
/// missing at the target (or, for a predicted end, whose target is not accepting).
pub fn check_guard_consistency(model: &Efsm) -> usize {
    model.guard_violations()
}

/// Repeatedly merges the targets of same-labeled transitions leaving one
/// state until no state has two outgoing transitions with the same label.
pub fn determinize(model: &Efsm) -> Efsm {
    let machine = Machine::from_efsm(model);
    let mut fold = Fold::new(&machine, false);
    fold.determinize_all();
    machine.quotient(&fold).0.to_efsm(model.guards_arc())
}

/// Identifies `b` with `a`, then determinizes. Fails if the pair is
/// incompatible or the result has more guard violations than the input.
pub fn merge(model: &Efsm, a: StateId, b: StateId) -> Result<Efsm, InferenceError> {
    let (ai, bi) = (check_state(model, a)?, check_state(model, b)?);
    let machine = Machine::from_efsm(model);
    let mut fold = Fold::new(&machine, true);
    if let Err(c) = fold.unify(ai, bi) {
        return Err(InferenceError::Incompatible(
            ai,
            bi,
            format!(
                "states {} and {} have disjoint guard predictions",
                c.left, c.right
            ),
        ));
    }
    let merged = determinize(&machine.quotient(&fold).0.to_efsm(model.guards_arc()));
    let (before, after) = (model.guard_violations(), merged.guard_violations());
    if after > before {
        return Err(InferenceError::Incompatible(
            ai,
            bi,
            format!("guard violations would rise from {before} to {after}"),
        ));
    }
    Ok(merged)
}

/// One committed step of the merge loop, for observers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MergeStep {
    /// The prefix tree made label-deterministic.
    Determinized,
    Merged {
        red: usize,
        blue: usize,
        score: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct InferenceStats {
    pub pta_states: usize,
    pub pta_violations: usize,
    pub merges: usize,
    pub promotions: usize,
    pub final_states: usize,
    pub final_violations: usize,
}

pub fn infer(corpus: &Corpus, config: &InferenceConfig) -> Result<Efsm, InferenceError> {
    infer_with_observer(corpus, config, &mut |_, _| {}).map(|(m, _)| m)
}

/// Runs inference, calling `observer` with the model after determinizing the
/// prefix tree and after every committed merge.
pub fn infer_with_observer(
    corpus: &Corpus,
    config: &InferenceConfig,
    observer: &mut dyn FnMut(&Efsm, &MergeStep),
) -> Result<(Efsm, InferenceStats), InferenceError> {
    if corpus.positives().next().is_none() {
        return Err(InferenceError::EmptyCorpus);
    }
    let guards = Arc::new(GuardModel::learn(
        corpus,
        &InfoGainTree {
            min_leaf: config.min_leaf,
        },
    )?);
    let pta = build_pta(corpus, Arc::clone(&guards));
    let mut stats = InferenceStats {
        pta_states: pta.state_count(),
        pta_violations: pta.guard_violations(),
        ..InferenceStats::default()
    };
    let start = determinize(&pta);
    observer(&start, &MergeStep::Determinized);

    let mut machine = Machine::from_efsm(&start);
    let mut violations = machine.violations();
    let mut red: BTreeSet<usize> = BTreeSet::from([0]);

    loop {
        let blue: BTreeSet<usize> = red
            .iter()
            .flat_map(|&r| machine.edges[r].iter().map(|e| e.target))
            .filter(|t| !red.contains(t))
            .collect();
        if blue.is_empty() {
            break;
        }

        let pairs: Vec<(usize, usize)> = blue
            .iter()
            .flat_map(|&b| red.iter().map(move |&r| (r, b)))
            .collect();
        let scores: Vec<Option<usize>> = pairs
            .par_iter()
            .map(|&(r, b)| {
                let mut fold = Fold::new(&machine, true);
                fold.unify(r, b).ok().map(|()| fold.score)
            })
            .collect();

        let mut compatible_blue = BTreeSet::new();
        let mut best: Option<(usize, usize, usize)> = None;
        for (&(r, b), score) in pairs.iter().zip(&scores) {
            let Some(score) = *score else { continue };
            compatible_blue.insert(b);
            if score < config.merge_threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((bs, br, bb)) => score > bs || (score == bs && (r, b) < (br, bb)),
            };
            if better {
                best = Some((score, r, b));
            }
        }

        let isolated = blue.iter().copied().find(|b| !compatible_blue.contains(b));
        let (score, r, b) = match (isolated, best) {
            (None, Some(best)) => best,
            (isolated, _) => {
                let b = isolated.unwrap_or_else(|| *blue.first().expect("non-empty"));
                debug!("promoting state {b}");
                red.insert(b);
                stats.promotions += 1;
                continue;
            }
        };

        let mut fold = Fold::new(&machine, true);
        if fold.unify(r, b).is_err() {
            unreachable!("scored pair must fold");
        }
        let (next, remap) = machine.quotient(&fold);
        let next_violations = next.violations();
        if next_violations > violations {
            // Never expected: identifying states only adds outgoing labels
            // and acceptance. Treat like an incompatible blue state.
            red.insert(b);
            stats.promotions += 1;
            continue;
        }
        debug!(
            "merged {b} into {r} (score {score}), {} states left",
            next.len()
        );
        machine = next;
        violations = next_violations;
        red = red.iter().map(|&s| remap[s]).collect();
        stats.merges += 1;
        observer(
            &machine.to_efsm(&guards),
            &MergeStep::Merged {
                red: r,
                blue: b,
                score,
            },
        );
    }

    let model = machine.to_efsm(&guards);
    stats.final_states = model.state_count();
    stats.final_violations = violations;
    info!(
        "inferred {} states from a {}-state prefix tree ({} merges, {} promotions)",
        stats.final_states, stats.pta_states, stats.merges, stats.promotions
    );
    Ok((model, stats))
}
