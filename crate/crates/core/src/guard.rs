//! Data guards: one decision tree per label predicting the next label from
//! the step's parameters.
//!
//! Every event contributes a training instance to its label's training set.
//! The attributes are the positional parameters `p1..pK` (missing ones are
//! [`ABSENT`]) and the `combined` flag; the class is the label of the next
//! event, or [`Class::End`] for the last event of a trace.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trace::{Corpus, Label, ParamVector, Polarity, END_TOKEN};

/// Attribute value for a parameter position the step did not use.
pub const ABSENT: &str = "∅";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GuardError {
    #[error("cannot learn a tree from zero instances")]
    NoInstances,
    #[error("invalid attribute name {0:?}")]
    BadAttribute(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribute {
    /// 1-based parameter position.
    Param(usize),
    Combined,
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Attribute::Param(i) => write!(f, "p{i}"),
            Attribute::Combined => f.write_str("combined"),
        }
    }
}

impl std::str::FromStr for Attribute {
    type Err = GuardError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "combined" {
            return Ok(Attribute::Combined);
        }
        s.strip_prefix('p')
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .map(Attribute::Param)
            .ok_or_else(|| GuardError::BadAttribute(s.to_string()))
    }
}

impl Serialize for Attribute {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Attribute {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What follows a step: another label, or the end of the proof.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Class {
    Next(Label),
    End,
}

impl Class {
    pub fn name(&self) -> &str {
        match self {
            Class::Next(l) => l.as_str(),
            Class::End => END_TOKEN,
        }
    }
}

// Classes order by name so that majority ties break lexicographically.
impl Ord for Class {
    fn cmp(&self, other: &Self) -> Ordering {
        self.name().cmp(other.name())
    }
}

impl PartialOrd for Class {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Class {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Class {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == END_TOKEN {
            Ok(Class::End)
        } else {
            Label::new(s)
                .map(Class::Next)
                .map_err(serde::de::Error::custom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TrainingInstance {
    pub attributes: BTreeMap<Attribute, String>,
    pub class: Class,
}

/// Attribute vector for a step of a label with the given arity.
pub fn attributes_for(values: &ParamVector, arity: usize) -> BTreeMap<Attribute, String> {
    let mut attrs: BTreeMap<Attribute, String> = (1..=arity)
        .map(|i| {
            let v = values.params.get(i - 1).map_or(ABSENT, String::as_str);
            (Attribute::Param(i), v.to_string())
        })
        .collect();
    attrs.insert(Attribute::Combined, values.combined.to_string());
    attrs
}

/// Per-label training sets; negative traces are ignored.
pub fn build_training_sets(corpus: &Corpus) -> BTreeMap<Label, Vec<TrainingInstance>> {
    let arities = arities(corpus);
    let mut sets: BTreeMap<Label, Vec<TrainingInstance>> = BTreeMap::new();
    for trace in corpus
        .traces()
        .iter()
        .filter(|t| t.polarity == Polarity::Positive)
    {
        for (i, event) in trace.events.iter().enumerate() {
            let class = trace
                .events
                .get(i + 1)
                .map_or(Class::End, |next| Class::Next(next.label.clone()));
            sets.entry(event.label.clone())
                .or_default()
                .push(TrainingInstance {
                    attributes: attributes_for(&event.values, arities[&event.label]),
                    class,
                });
        }
    }
    sets
}

fn arities(corpus: &Corpus) -> BTreeMap<Label, usize> {
    let mut out: BTreeMap<Label, usize> = BTreeMap::new();
    for trace in corpus
        .traces()
        .iter()
        .filter(|t| t.polarity == Polarity::Positive)
    {
        for e in &trace.events {
            let k = out.entry(e.label.clone()).or_default();
            *k = (*k).max(e.values.params.len());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionTree {
    Leaf {
        class: Class,
        distribution: BTreeMap<Class, usize>,
    },
    Node {
        attribute: Attribute,
        children: BTreeMap<String, DecisionTree>,
        /// Value whose child receives attribute values unseen in training.
        default: String,
    },
}

impl DecisionTree {
    pub fn classify(&self, attrs: &BTreeMap<Attribute, String>) -> &Class {
        let mut node = self;
        loop {
            match node {
                DecisionTree::Leaf { class, .. } => return class,
                DecisionTree::Node {
                    attribute,
                    children,
                    default,
                } => {
                    let value = attrs.get(attribute).map_or(ABSENT, String::as_str);
                    node = children.get(value).unwrap_or_else(|| &children[default]);
                }
            }
        }
    }

    /// Training instances that reached this subtree.
    pub fn mass(&self) -> usize {
        match self {
            DecisionTree::Leaf { distribution, .. } => distribution.values().sum(),
            DecisionTree::Node { children, .. } => children.values().map(DecisionTree::mass).sum(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            DecisionTree::Leaf { .. } => 0,
            DecisionTree::Node { children, .. } => {
                1 + children
                    .values()
                    .map(DecisionTree::depth)
                    .max()
                    .unwrap_or(0)
            }
        }
    }

    /// One `(attr = value) and ...: class` line per leaf.
    pub fn rules(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_rules(&mut Vec::new(), &mut out);
        out
    }

    fn collect_rules(&self, path: &mut Vec<String>, out: &mut Vec<String>) {
        match self {
            DecisionTree::Leaf { class, .. } => {
                out.push(format!("{}: {class}", path.join(" and ")))
            }
            DecisionTree::Node {
                attribute,
                children,
                ..
            } => {
                for (value, child) in children {
                    path.push(format!("({attribute} = {value})"));
                    child.collect_rules(path, out);
                    path.pop();
                }
            }
        }
    }
}

/// A classifier that turns a label's training set into a tree.
pub trait Learner: Sync {
    fn learn(&self, instances: &[TrainingInstance]) -> Result<DecisionTree, GuardError>;
}

/// Top-down induction with information gain and multiway categorical splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InfoGainTree {
    /// Nodes with fewer than `2 * min_leaf` instances become leaves.
    pub min_leaf: usize,
}

impl Default for InfoGainTree {
    fn default() -> Self {
        InfoGainTree { min_leaf: 1 }
    }
}

impl Learner for InfoGainTree {
    fn learn(&self, instances: &[TrainingInstance]) -> Result<DecisionTree, GuardError> {
        learn_tree(instances, self.min_leaf)
    }
}

type Partition<'a> = BTreeMap<String, Vec<&'a TrainingInstance>>;

pub fn learn_tree(
    instances: &[TrainingInstance],
    min_leaf: usize,
) -> Result<DecisionTree, GuardError> {
    if instances.is_empty() {
        return Err(GuardError::NoInstances);
    }
    let mut sorted: Vec<&TrainingInstance> = instances.iter().collect();
    sorted.sort();
    let attrs: BTreeSet<Attribute> = sorted
        .iter()
        .flat_map(|i| i.attributes.keys().copied())
        .collect();
    Ok(grow(&sorted, &attrs, min_leaf.max(1)))
}

fn distribution(instances: &[&TrainingInstance]) -> BTreeMap<Class, usize> {
    let mut dist = BTreeMap::new();
    for i in instances {
        *dist.entry(i.class.clone()).or_insert(0) += 1;
    }
    dist
}

fn entropy(counts: impl Iterator<Item = usize> + Clone) -> f64 {
    let total: usize = counts.clone().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

fn majority(dist: &BTreeMap<Class, usize>) -> Class {
    // BTreeMap iterates in class order, so the first maximum wins ties.
    let mut best: Option<(&Class, usize)> = None;
    for (class, &n) in dist {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((class, n));
        }
    }
    best.expect("non-empty distribution").0.clone()
}

fn partition<'a>(instances: &[&'a TrainingInstance], attr: Attribute) -> Partition<'a> {
    let mut parts: BTreeMap<String, Vec<&TrainingInstance>> = BTreeMap::new();
    for &i in instances {
        let v = i.attributes.get(&attr).map_or(ABSENT, String::as_str);
        parts.entry(v.to_string()).or_default().push(i);
    }
    parts
}

const GAIN_EPSILON: f64 = 1e-12;

fn grow(
    instances: &[&TrainingInstance],
    attrs: &BTreeSet<Attribute>,
    min_leaf: usize,
) -> DecisionTree {
    let dist = distribution(instances);
    let leaf = || DecisionTree::Leaf {
        class: majority(&dist),
        distribution: dist.clone(),
    };
    if dist.len() == 1 || attrs.is_empty() || instances.len() < 2 * min_leaf {
        return leaf();
    }

    let base = entropy(dist.values().copied());
    let n = instances.len() as f64;
    let mut best: Option<(Attribute, f64, Partition)> = None;
    for &attr in attrs {
        let parts = partition(instances, attr);
        if parts.len() < 2 {
            continue;
        }
        let remainder: f64 = parts
            .values()
            .map(|p| p.len() as f64 / n * entropy(distribution(p).values().copied()))
            .sum();
        let gain = base - remainder;
        if best
            .as_ref()
            .is_none_or(|(_, g, _)| gain > g + GAIN_EPSILON)
        {
            best = Some((attr, gain, parts));
        }
    }
    let Some((attribute, gain, parts)) = best else {
        return leaf();
    };
    if gain <= GAIN_EPSILON {
        return leaf();
    }

    let mut rest = attrs.clone();
    rest.remove(&attribute);
    let mut default: Option<(&String, usize)> = None;
    for (value, part) in &parts {
        if default.is_none_or(|(_, m)| part.len() > m) {
            default = Some((value, part.len()));
        }
    }
    let default = default.expect("at least two partitions").0.clone();
    let children = parts
        .iter()
        .map(|(value, part)| (value.clone(), grow(part, &rest, min_leaf)))
        .collect();
    DecisionTree::Node {
        attribute,
        children,
        default,
    }
}

/// Outcome of asking the guards what should follow a step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prediction {
    Class(Class),
    /// The label never occurred in training; callers treat this as "no prediction".
    UnknownLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardModel {
    trees: BTreeMap<Label, DecisionTree>,
    arities: BTreeMap<Label, usize>,
}

impl GuardModel {
    /// Learns one tree per label of the corpus' positive traces.
    pub fn learn(corpus: &Corpus, learner: &dyn Learner) -> Result<Self, GuardError> {
        let sets = build_training_sets(corpus);
        let trees = sets
            .par_iter()
            .map(|(label, instances)| Ok((label.clone(), learner.learn(instances)?)))
            .collect::<Result<BTreeMap<_, _>, GuardError>>()?;
        Ok(GuardModel {
            trees,
            arities: arities(corpus),
        })
    }

    pub fn from_parts(
        trees: BTreeMap<Label, DecisionTree>,
        arities: BTreeMap<Label, usize>,
    ) -> Self {
        GuardModel { trees, arities }
    }

    pub fn tree(&self, label: &Label) -> Option<&DecisionTree> {
        self.trees.get(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.trees.keys()
    }

    pub fn arity(&self, label: &Label) -> usize {
        self.arities.get(label).copied().unwrap_or(0)
    }

    pub fn predict(&self, label: &Label, values: &ParamVector) -> Prediction {
        match self.trees.get(label) {
            Some(tree) => Prediction::Class(
                tree.classify(&attributes_for(values, self.arity(label)))
                    .clone(),
            ),
            None => Prediction::UnknownLabel,
        }
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("guard model serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Human-readable rule dump, one block per label.
    pub fn rules_text(&self) -> String {
        let mut out = String::new();
        for (label, tree) in &self.trees {
            out.push_str(&format!("MODEL FOR:{label}\n------------------\n"));
            for rule in tree.rules() {
                out.push_str(&rule);
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }

    /// JSON rule dump: `{"labels":[{"label":..,"arity":..,"rules":[..]}]}`.
    pub fn rules_json(&self) -> serde_json::Value {
        let labels: Vec<_> = self
            .trees
            .iter()
            .map(|(label, tree)| {
                serde_json::json!({
                    "label": label,
                    "arity": self.arity(label),
                    "rules": tree.rules(),
                })
            })
            .collect();
        serde_json::json!({ "labels": labels })
    }
}
