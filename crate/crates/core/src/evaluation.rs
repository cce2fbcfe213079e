//! k-fold cross validation against mutated and foreign negative traces.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::efsm::{build_pta, walk, AcceptMode};
use crate::guard::GuardModel;
use crate::inference::{infer, InferenceConfig, InferenceError};
use crate::trace::{Corpus, Polarity, Trace};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_NEGATIVES: usize = 30;
/// How many draws per requested negative before giving up.
const DRAW_BUDGET: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("cannot split {traces} traces into {k} folds")]
    TooManyFolds { k: usize, traces: usize },
    #[error("trace {0} cannot be mutated: it needs at least two distinct events")]
    NotMutable(String),
    #[error("negative count must be at least 1")]
    NoNegativesRequested,
    #[error("only {found} of {wanted} negative traces could be drawn (short by {})", wanted - found)]
    InsufficientNegatives { wanted: usize, found: usize },
    #[error("no negative traces to evaluate against")]
    NoNegatives,
    #[error("fold {fold}: {source}")]
    Inference {
        fold: usize,
        #[source]
        source: InferenceError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Trace name to fold index.
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    /// Names of the traces in fold `i`, in corpus order.
    pub fn fold<'c>(&self, corpus: &'c Corpus, i: usize) -> Vec<&'c Trace> {
        corpus
            .traces()
            .iter()
            .filter(|t| self.assignment.get(&t.name) == Some(&i))
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded shuffle of the corpus, then round-robin assignment to `k` folds.
pub fn make_folds(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    if k < 2 {
        return Err(EvalError::TooFewFolds(k));
    }
    if k > corpus.len() {
        return Err(EvalError::TooManyFolds {
            k,
            traces: corpus.len(),
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignment = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| (corpus.traces()[i].name.clone(), pos % k))
        .collect();
    Ok(FoldPlan {
        k,
        seed,
        assignment,
    })
}

fn is_mutable(trace: &Trace) -> bool {
    trace.events.iter().any(|e| e != &trace.events[0])
}

fn mutate_with(trace: &Trace, rng: &mut ChaCha8Rng) -> Result<Trace, EvalError> {
    if trace.len() < 2 || !is_mutable(trace) {
        return Err(EvalError::NotMutable(trace.name.clone()));
    }
    let mut events = trace.events.clone();
    while events == trace.events {
        events.shuffle(rng);
    }
    Ok(Trace {
        name: format!("{}#neg", trace.name),
        events,
        polarity: Polarity::Negative,
    })
}

/// A seeded permutation of the trace's events that differs from the
/// original order.
pub fn mutate_negative(trace: &Trace, seed: u64) -> Result<Trace, EvalError> {
    mutate_with(trace, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Draws `count` negatives, alternating between mutations of `corpus` traces
/// and verbatim `foreign` traces. Anything the full-corpus prefix tree
/// accepts is discarded.
pub fn build_negatives(
    corpus: &Corpus,
    foreign: &Corpus,
    count: usize,
    seed: u64,
) -> Result<Vec<Trace>, EvalError> {
    if count == 0 {
        return Err(EvalError::NoNegativesRequested);
    }
    let pta = build_pta(corpus, Arc::new(GuardModel::default()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mutable: Vec<&Trace> = corpus.positives().filter(|t| is_mutable(t)).collect();
    let mut foreign_pool: Vec<&Trace> = foreign.traces().iter().collect();
    foreign_pool.shuffle(&mut rng);
    foreign_pool.reverse();

    let mut negatives = Vec::with_capacity(count);
    let mut seen_names: HashMap<String, usize> = HashMap::new();
    let mut mutate_turn = true;
    for _ in 0..count * DRAW_BUDGET {
        if negatives.len() == count {
            break;
        }
        let use_mutation = (mutate_turn || foreign_pool.is_empty()) && !mutable.is_empty();
        mutate_turn = !mutate_turn;
        let mut candidate = if use_mutation {
            let source = mutable[rng.random_range(0..mutable.len())];
            mutate_with(source, &mut rng)?
        } else if let Some(t) = foreign_pool.pop() {
            Trace {
                polarity: Polarity::Negative,
                ..t.clone()
            }
        } else {
            break;
        };
        if walk(&pta, &candidate, AcceptMode::ControlOnly).accepted() {
            continue;
        }
        let n = seen_names.entry(candidate.name.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            candidate.name = format!("{}#{}", candidate.name, n);
        }
        negatives.push(candidate);
    }
    if negatives.len() < count {
        return Err(EvalError::InsufficientNegatives {
            wanted: count,
            found: negatives.len(),
        });
    }
    Ok(negatives)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Sensitivity and specificity; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(m: &ConfusionMatrix) -> Metrics {
    Metrics {
        sensitivity: ratio(m.tp, m.tp + m.fn_),
        specificity: ratio(m.tn, m.tn + m.fp),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FoldResult {
    pub fold: usize,
    pub training_traces: usize,
    pub evaluation_traces: usize,
    pub states: usize,
    pub matrix: ConfusionMatrix,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub dataset: String,
    pub proofs: usize,
    pub lines: usize,
    pub k: usize,
    pub seed: u64,
    pub mode: AcceptMode,
    pub config: InferenceConfig,
    pub negatives: usize,
    pub folds: Vec<FoldResult>,
    pub mean_sensitivity: Option<f64>,
    pub mean_specificity: Option<f64>,
}

/// Mean over the folds where the value is defined.
fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One header row and one data row, columns aligned.
    pub fn to_table(&self) -> String {
        let header = ["Data Set", "Proofs", "Lines", "Sensitivity", "Specificity"];
        let row = [
            self.dataset.clone(),
            self.proofs.to_string(),
            self.lines.to_string(),
            fmt_metric(self.mean_sensitivity),
            fmt_metric(self.mean_specificity),
        ];
        let widths: Vec<usize> = header
            .iter()
            .zip(&row)
            .map(|(h, r)| h.chars().count().max(r.chars().count()))
            .collect();
        let mut out = String::new();
        for cells in [header.map(String::from), row] {
            let line: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| {
                    if i == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  "));
        }
        out
    }
}

/// For each fold, infers from the other folds and walks the held-out
/// positives and every negative through the result.
pub fn cross_validate(
    corpus: &Corpus,
    negatives: &[Trace],
    plan: &FoldPlan,
    config: &InferenceConfig,
    mode: AcceptMode,
) -> Result<EvalReport, EvalError> {
    if negatives.is_empty() {
        return Err(EvalError::NoNegatives);
    }
    let results: Vec<Result<FoldResult, EvalError>> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let (held, train): (Vec<&Trace>, Vec<&Trace>) = corpus
                .traces()
                .iter()
                .partition(|t| plan.assignment.get(&t.name) == Some(&fold));
            let training = Corpus::new(train.into_iter().cloned().collect(), corpus.source.clone());
            let model =
                infer(&training, config).map_err(|source| EvalError::Inference { fold, source })?;
            let mut matrix = ConfusionMatrix::default();
            let positives: Vec<&Trace> = held
                .into_iter()
                .filter(|t| t.polarity == Polarity::Positive)
                .collect();
            for t in &positives {
                if walk(&model, t, mode).accepted() {
                    matrix.tp += 1;
                } else {
                    matrix.fn_ += 1;
                }
            }
            for t in negatives {
                if walk(&model, t, mode).accepted() {
                    matrix.fp += 1;
                } else {
                    matrix.tn += 1;
                }
            }
            let Metrics {
                sensitivity,
                specificity,
            } = metrics(&matrix);
            Ok(FoldResult {
                fold,
                training_traces: training.len(),
                evaluation_traces: positives.len(),
                states: model.state_count(),
                matrix,
                sensitivity,
                specificity,
            })
        })
        .collect();
    let folds = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport {
        dataset: corpus.source.clone(),
        proofs: corpus.positives().count(),
        lines: corpus.event_count(),
        k: plan.k,
        seed: plan.seed,
        mode,
        config: *config,
        negatives: negatives.len(),
        mean_sensitivity: mean(folds.iter().map(|f| f.sensitivity)),
        mean_specificity: mean(folds.iter().map(|f| f.specificity)),
        folds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experiment {
    pub k: usize,
    pub negatives: usize,
    pub seed: u64,
    pub mode: AcceptMode,
    pub config: InferenceConfig,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            k: DEFAULT_FOLDS,
            negatives: DEFAULT_NEGATIVES,
            seed: 0,
            mode: AcceptMode::Guarded,
            config: InferenceConfig::default(),
        }
    }
}

/// Folds, negatives and cross validation from one seed.
pub fn run_experiment(
    corpus: &Corpus,
    foreign: &Corpus,
    experiment: &Experiment,
) -> Result<EvalReport, EvalError> {
    let plan = make_folds(corpus, experiment.k, experiment.seed)?;
    let negatives = build_negatives(corpus, foreign, experiment.negatives, experiment.seed)?;
    cross_validate(
        corpus,
        &negatives,
        &plan,
        &experiment.config,
        experiment.mode,
    )
}
