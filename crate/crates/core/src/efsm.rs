//! Extended finite state machines over proof-step labels.
//!
//! Transitions carry the parameter vectors observed on them ("witnesses");
//! together with the per-label trees of the shared [`GuardModel`] they make
//! up the transition's data guard.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guard::{Class, GuardModel, Prediction};
use crate::trace::{Corpus, Label, ParamVector, Polarity, Trace, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub usize);

impl StateId {
    pub const INITIAL: StateId = StateId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed model document: {0}")]
    Malformed(String),
    #[error("unsupported model schema version {0}")]
    UnsupportedVersion(u64),
    #[error("initial state must be 0, found {0}")]
    InitialNotZero(usize),
    #[error("{what} refers to state {state}, but the model has {count} states")]
    DanglingState {
        what: String,
        state: usize,
        count: usize,
    },
    #[error("state {0} is unreachable from the initial state")]
    Unreachable(usize),
    #[error("guard hash mismatch: document says {expected}, guards hash to {actual}")]
    GuardHashMismatch { expected: String, actual: String },
}

/// Observed parameter vectors with the number of training steps that used them.
pub type Witnesses = BTreeMap<ParamVector, usize>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub source: StateId,
    pub label: Label,
    pub target: StateId,
    pub witnesses: Witnesses,
}

impl Transition {
    /// Witnesses ordered by frequency (descending), then lexicographically.
    pub fn ranked_witnesses(&self) -> Vec<&ParamVector> {
        let mut ranked: Vec<(&ParamVector, usize)> =
            self.witnesses.iter().map(|(v, &n)| (v, n)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.into_iter().map(|(v, _)| v).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Efsm {
    state_count: usize,
    accepting: BTreeSet<StateId>,
    /// Sorted by (source, label, target); no duplicate triples.
    transitions: Vec<Transition>,
    guards: Arc<GuardModel>,
    /// Indices into `transitions`, per source state.
    outgoing: Vec<Vec<usize>>,
}

impl Efsm {
    /// Assembles a model, folding duplicate (source, label, target) triples
    /// together and checking that every state is reachable from state 0.
    pub fn new(
        state_count: usize,
        accepting: BTreeSet<StateId>,
        transitions: Vec<Transition>,
        guards: Arc<GuardModel>,
    ) -> Result<Self, ModelError> {
        let state_count = state_count.max(1);
        let dangling = |what: String, s: StateId| ModelError::DanglingState {
            what,
            state: s.0,
            count: state_count,
        };
        for &s in &accepting {
            if s.0 >= state_count {
                return Err(dangling("accepting set".into(), s));
            }
        }
        let mut merged: BTreeMap<(StateId, Label, StateId), Witnesses> = BTreeMap::new();
        for t in transitions {
            for s in [t.source, t.target] {
                if s.0 >= state_count {
                    return Err(dangling(
                        format!("transition {} -{}-> {}", t.source, t.label, t.target),
                        s,
                    ));
                }
            }
            let w = merged.entry((t.source, t.label, t.target)).or_default();
            for (v, n) in t.witnesses {
                *w.entry(v).or_insert(0) += n;
            }
        }
        let transitions: Vec<Transition> = merged
            .into_iter()
            .map(|((source, label, target), witnesses)| Transition {
                source,
                label,
                target,
                witnesses,
            })
            .collect();
        let mut outgoing = vec![Vec::new(); state_count];
        for (i, t) in transitions.iter().enumerate() {
            outgoing[t.source.0].push(i);
        }
        let model = Efsm {
            state_count,
            accepting,
            transitions,
            guards,
            outgoing,
        };
        if let Some(s) = model.unreachable().first() {
            return Err(ModelError::Unreachable(s.0));
        }
        Ok(model)
    }

    fn unreachable(&self) -> Vec<StateId> {
        let mut seen = vec![false; self.state_count];
        let mut queue = VecDeque::from([StateId::INITIAL]);
        seen[0] = true;
        while let Some(s) = queue.pop_front() {
            for t in self.outgoing(s) {
                if !seen[t.target.0] {
                    seen[t.target.0] = true;
                    queue.push_back(t.target);
                }
            }
        }
        (0..self.state_count)
            .filter(|&i| !seen[i])
            .map(StateId)
            .collect()
    }

    pub fn initial(&self) -> StateId {
        StateId::INITIAL
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.state_count).map(StateId)
    }

    pub fn accepting(&self) -> &BTreeSet<StateId> {
        &self.accepting
    }

    pub fn is_accepting(&self, s: StateId) -> bool {
        self.accepting.contains(&s)
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn guards(&self) -> &GuardModel {
        &self.guards
    }

    pub fn guards_arc(&self) -> &Arc<GuardModel> {
        &self.guards
    }

    pub fn outgoing(&self, s: StateId) -> impl Iterator<Item = &Transition> {
        self.outgoing
            .get(s.0)
            .into_iter()
            .flatten()
            .map(move |&i| &self.transitions[i])
    }

    pub fn has_outgoing_label(&self, s: StateId, label: &Label) -> bool {
        self.outgoing(s).any(|t| &t.label == label)
    }

    /// The transition an event takes from `s`: among same-labeled
    /// transitions, one that witnessed the exact parameters wins.
    pub fn step(&self, s: StateId, event: &TraceEvent) -> Option<&Transition> {
        let mut first = None;
        for t in self.outgoing(s).filter(|t| t.label == event.label) {
            if t.witnesses.contains_key(&event.values) {
                return Some(t);
            }
            first.get_or_insert(t);
        }
        first
    }

    /// True when no state has two outgoing transitions with the same label.
    pub fn is_label_deterministic(&self) -> bool {
        self.states().all(|s| {
            let mut seen = BTreeSet::new();
            self.outgoing(s).all(|t| seen.insert(&t.label))
        })
    }

    pub fn label_set(&self) -> BTreeSet<&Label> {
        self.transitions.iter().map(|t| &t.label).collect()
    }

    /// Whether the guard demand for data `values` on `label` is met at `target`.
    fn guard_satisfied(
        &self,
        label: &Label,
        values: &ParamVector,
        target: StateId,
        last: bool,
    ) -> bool {
        match self.guards.predict(label, values) {
            Prediction::UnknownLabel => true,
            Prediction::Class(Class::End) => last || self.is_accepting(target),
            Prediction::Class(Class::Next(next)) => self.has_outgoing_label(target, &next),
        }
    }

    /// Number of (transition, witness) pairs whose predicted successor is not
    /// available at the transition's target.
    pub fn guard_violations(&self) -> usize {
        self.transitions
            .iter()
            .map(|t| {
                t.witnesses
                    .keys()
                    .filter(|v| !self.guard_satisfied(&t.label, v, t.target, false))
                    .count()
            })
            .sum()
    }

    pub fn export_dot(&self) -> String {
        export_dot(self)
    }

    pub fn to_json(&self) -> Vec<u8> {
        export_json(self)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ModelError> {
        import_json(bytes)
    }
}

/// Builds the prefix tree acceptor. Traces share a path only while their
/// events agree on label and full parameter vector. States are numbered in
/// breadth-first order.
pub fn build_pta(corpus: &Corpus, guards: Arc<GuardModel>) -> Efsm {
    struct Node {
        children: BTreeMap<(Label, ParamVector), usize>,
        uses: BTreeMap<(Label, ParamVector), usize>,
        accepting: bool,
    }
    let new_node = || Node {
        children: BTreeMap::new(),
        uses: BTreeMap::new(),
        accepting: false,
    };
    let mut nodes = vec![new_node()];
    for trace in corpus
        .traces()
        .iter()
        .filter(|t| t.polarity == Polarity::Positive)
    {
        let mut cur = 0;
        for e in &trace.events {
            let key = (e.label.clone(), e.values.clone());
            *nodes[cur].uses.entry(key.clone()).or_insert(0) += 1;
            cur = match nodes[cur].children.get(&key) {
                Some(&c) => c,
                None => {
                    nodes.push(new_node());
                    let c = nodes.len() - 1;
                    nodes[cur].children.insert(key, c);
                    c
                }
            };
        }
        nodes[cur].accepting = true;
    }

    let mut order = vec![usize::MAX; nodes.len()];
    let mut queue = VecDeque::from([0usize]);
    let mut next = 0;
    while let Some(n) = queue.pop_front() {
        order[n] = next;
        next += 1;
        queue.extend(nodes[n].children.values().copied());
    }

    let mut transitions = Vec::new();
    let mut accepting = BTreeSet::new();
    for (i, node) in nodes.iter().enumerate() {
        if node.accepting {
            accepting.insert(StateId(order[i]));
        }
        for ((label, values), &child) in &node.children {
            transitions.push(Transition {
                source: StateId(order[i]),
                label: label.clone(),
                target: StateId(order[child]),
                witnesses: BTreeMap::from([(
                    values.clone(),
                    node.uses[&(label.clone(), values.clone())],
                )]),
            });
        }
    }
    Efsm::new(nodes.len(), accepting, transitions, guards).expect("prefix tree is well formed")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcceptMode {
    /// Labels only; parameters are ignored.
    ControlOnly,
    /// Labels plus the guard demand of each step's parameters.
    #[default]
    Guarded,
}

impl std::str::FromStr for AcceptMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "guarded" => Ok(AcceptMode::Guarded),
            "control-only" | "control" => Ok(AcceptMode::ControlOnly),
            other => Err(format!(
                "unknown mode {other:?} (expected guarded or control-only)"
            )),
        }
    }
}

impl fmt::Display for AcceptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AcceptMode::ControlOnly => "control-only",
            AcceptMode::Guarded => "guarded",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WalkReason {
    Ok,
    MissingTransition,
    NonAcceptingFinal,
    GuardViolation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkResult {
    pub verdict: Verdict,
    pub reason: WalkReason,
    pub path: Vec<StateId>,
}

impl WalkResult {
    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accepted
    }
}

/// Runs a trace through the model.
///
/// In guarded mode each step whose parameters were never witnessed on the
/// transition taken must also satisfy its guard: the label predicted to
/// follow must leave the target state (or, for a predicted end, the trace
/// must end or the target must be accepting). Witnessed parameters lie
/// inside the transition's guard by construction.
pub fn walk(model: &Efsm, trace: &Trace, mode: AcceptMode) -> WalkResult {
    let mut cur = model.initial();
    let mut path = vec![cur];
    let reject = |reason, path| WalkResult {
        verdict: Verdict::Rejected,
        reason,
        path,
    };
    for (i, event) in trace.events.iter().enumerate() {
        let Some(t) = model.step(cur, event) else {
            return reject(WalkReason::MissingTransition, path);
        };
        cur = t.target;
        path.push(cur);
        if mode == AcceptMode::Guarded
            && !t.witnesses.contains_key(&event.values)
            && !model.guard_satisfied(&event.label, &event.values, cur, i + 1 == trace.len())
        {
            return reject(WalkReason::GuardViolation, path);
        }
    }
    if model.is_accepting(cur) {
        WalkResult {
            verdict: Verdict::Accepted,
            reason: WalkReason::Ok,
            path,
        }
    } else {
        reject(WalkReason::NonAcceptingFinal, path)
    }
}

fn witness_text(v: &ParamVector) -> String {
    let mut s = if v.params.is_empty() {
        "()".to_string()
    } else {
        v.params.join(" ")
    };
    if v.combined {
        s.push(';');
    }
    s
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

const DOT_WITNESS_LIMIT: usize = 3;

/// GraphViz rendering: initial state marked by an arrow from a point node,
/// accepting states double-circled, edges labeled `label [w1 | w2 | w3 | …]`.
pub fn export_dot(model: &Efsm) -> String {
    let mut out = String::from("digraph efsm {\n  rankdir=LR;\n  node [shape=circle];\n");
    out.push_str("  __start [shape=point];\n");
    let _ = writeln!(out, "  __start -> {};", model.initial());
    for s in model.states() {
        let shape = if model.is_accepting(s) {
            "doublecircle"
        } else {
            "circle"
        };
        let _ = writeln!(out, "  {s} [shape={shape}];");
    }
    for t in model.transitions() {
        let ranked = t.ranked_witnesses();
        let mut summary: Vec<String> = ranked
            .iter()
            .filter(|v| !v.params.is_empty() || v.combined)
            .take(DOT_WITNESS_LIMIT)
            .map(|v| witness_text(v))
            .collect();
        if ranked.len() > DOT_WITNESS_LIMIT && !summary.is_empty() {
            summary.push("…".into());
        }
        let text = if summary.is_empty() {
            t.label.to_string()
        } else {
            format!("{} [{}]", t.label, summary.join(" | "))
        };
        let _ = writeln!(
            out,
            "  {} -> {} [label=\"{}\"];",
            t.source,
            t.target,
            dot_escape(&text)
        );
    }
    out.push_str("}\n");
    out
}

pub const MODEL_SCHEMA_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ModelDoc {
    version: u64,
    states: usize,
    initial: usize,
    accepting: Vec<usize>,
    transitions: Vec<TransitionDoc>,
    guards: GuardModel,
    guard_hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionDoc {
    source: usize,
    label: Label,
    target: usize,
    witnesses: Vec<WitnessDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WitnessDoc {
    params: Vec<String>,
    combined: bool,
    count: usize,
}

pub fn export_json(model: &Efsm) -> Vec<u8> {
    let doc = ModelDoc {
        version: MODEL_SCHEMA_VERSION,
        states: model.state_count,
        initial: model.initial().0,
        accepting: model.accepting.iter().map(|s| s.0).collect(),
        transitions: model
            .transitions
            .iter()
            .map(|t| TransitionDoc {
                source: t.source.0,
                label: t.label.clone(),
                target: t.target.0,
                witnesses: t
                    .witnesses
                    .iter()
                    .map(|(v, &count)| WitnessDoc {
                        params: v.params.clone(),
                        combined: v.combined,
                        count,
                    })
                    .collect(),
            })
            .collect(),
        guards: (*model.guards).clone(),
        guard_hash: model.guards.content_hash(),
    };
    serde_json::to_vec(&doc).expect("model document serializes")
}

pub fn import_json(bytes: &[u8]) -> Result<Efsm, ModelError> {
    let raw: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| ModelError::Malformed(e.to_string()))?;
    match raw.get("version").and_then(serde_json::Value::as_u64) {
        Some(MODEL_SCHEMA_VERSION) => {}
        Some(v) => return Err(ModelError::UnsupportedVersion(v)),
        None => return Err(ModelError::Malformed("missing integer `version`".into())),
    }
    let doc: ModelDoc =
        serde_json::from_value(raw).map_err(|e| ModelError::Malformed(e.to_string()))?;
    if doc.initial != 0 {
        return Err(ModelError::InitialNotZero(doc.initial));
    }
    let actual = doc.guards.content_hash();
    if actual != doc.guard_hash {
        return Err(ModelError::GuardHashMismatch {
            expected: doc.guard_hash,
            actual,
        });
    }
    let mut transitions = Vec::with_capacity(doc.transitions.len());
    for t in doc.transitions {
        let mut witnesses = Witnesses::new();
        for w in t.witnesses {
            let v = ParamVector::new(&w.params, w.combined)
                .map_err(|e| ModelError::Malformed(format!("witness on {}: {e}", t.label)))?;
            *witnesses.entry(v).or_insert(0) += w.count;
        }
        transitions.push(Transition {
            source: StateId(t.source),
            label: t.label,
            target: StateId(t.target),
            witnesses,
        });
    }
    if doc.states == 0 {
        return Err(ModelError::Malformed(
            "a model has at least one state".into(),
        ));
    }
    Efsm::new(
        doc.states,
        doc.accepting.into_iter().map(StateId).collect(),
        transitions,
        Arc::new(doc.guards),
    )
}

/// Node/edge form of the model for graph renderers.
pub fn adjacency_json(model: &Efsm) -> serde_json::Value {
    let nodes: Vec<_> = model
        .states()
        .map(|s| {
            serde_json::json!({
                "id": s.0,
                "initial": s == model.initial(),
                "accepting": model.is_accepting(s),
            })
        })
        .collect();
    let edges: Vec<_> = model
        .transitions()
        .iter()
        .map(|t| {
            serde_json::json!({
                "source": t.source.0,
                "target": t.target.0,
                "label": t.label,
                "witnesses": t.ranked_witnesses(),
            })
        })
        .collect();
    serde_json::json!({
        "initial": model.initial().0,
        "accepting": model.accepting().iter().map(|s| s.0).collect::<Vec<_>>(),
        "nodes": nodes,
        "edges": edges,
    })
}
