//! Traces, corpora and the versioned trace JSON interchange format.
//!
//! A proof becomes a [`Trace`]: one [`TraceEvent`] per proof step, where the
//! label is the tactic name and the [`ParamVector`] holds its textual
//! parameters. Steps without parameters get a `_0` suffix on their label.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Suffix marking a step that was applied without parameters.
pub const ZERO_PARAM_SUFFIX: &str = "_0";

/// Reserved class name for "the trace ends here"; never a valid label.
pub const END_TOKEN: &str = "⟨end⟩";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("invalid label {0:?}: labels are non-empty and contain no whitespace, '.' or ';'")]
    InvalidLabel(String),
    #[error("invalid method {0:?}: {1}")]
    InvalidMethod(String, &'static str),
    #[error("empty parameter")]
    EmptyParam,
    #[error("malformed trace document: {0}")]
    Malformed(String),
    #[error("unsupported trace schema version {0}")]
    UnsupportedVersion(u64),
    #[error("trace {trace:?}, event {event}: {reason}")]
    BadEvent {
        trace: String,
        event: usize,
        reason: String,
    },
}

/// Name of a proof method as it appears on transitions (`induction`, `intros_0`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(String);

impl Label {
    pub fn new(name: impl Into<String>) -> Result<Self, TraceError> {
        let name = name.into();
        let valid = !name.is_empty()
            && name != END_TOKEN
            && !name
                .chars()
                .any(|c| c.is_whitespace() || c == '.' || c == ';');
        if valid {
            Ok(Label(name))
        } else {
            Err(TraceError::InvalidLabel(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_zero_param(&self) -> bool {
        self.0.ends_with(ZERO_PARAM_SUFFIX)
    }

    /// The tactic name with any `_0` suffix stripped.
    pub fn method(&self) -> &str {
        self.0.strip_suffix(ZERO_PARAM_SUFFIX).unwrap_or(&self.0)
    }
}

impl TryFrom<String> for Label {
    type Error = TraceError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Label::new(value)
    }
}

impl From<Label> for String {
    fn from(value: Label) -> Self {
        value.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Positional parameters of a step plus the `;` combination flag.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamVector {
    pub params: Vec<String>,
    #[serde(default)]
    pub combined: bool,
}

impl ParamVector {
    /// Builds a vector, collapsing internal whitespace runs in each parameter.
    pub fn new<S: AsRef<str>>(params: &[S], combined: bool) -> Result<Self, TraceError> {
        let params = params
            .iter()
            .map(|p| normalize_param(p.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ParamVector { params, combined })
    }

    pub fn empty() -> Self {
        ParamVector::default()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

fn normalize_param(raw: &str) -> Result<String, TraceError> {
    let joined = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if joined.is_empty() {
        Err(TraceError::EmptyParam)
    } else {
        Ok(joined)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub label: Label,
    pub values: ParamVector,
}

impl TraceEvent {
    /// Renders the event as a proof step, without the terminating `.`/`;`.
    pub fn render(&self) -> String {
        let mut out = self.label.method().to_string();
        for p in &self.values.params {
            out.push(' ');
            out.push_str(p);
        }
        out
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())?;
        if self.values.combined {
            f.write_str(";")?;
        }
        Ok(())
    }
}

/// Turns one proof step into a trace event.
///
/// The label is `method` when parameters are present and `method_0` when
/// they are not. Methods already ending in `_0` are rejected so that the
/// suffix stays unambiguous.
pub fn encode_step<S: AsRef<str>>(
    method: &str,
    params: &[S],
    combined: bool,
) -> Result<TraceEvent, TraceError> {
    if method.is_empty() {
        return Err(TraceError::InvalidMethod(method.into(), "empty"));
    }
    if method
        .chars()
        .any(|c| c.is_whitespace() || c == '.' || c == ';')
    {
        return Err(TraceError::InvalidMethod(
            method.into(),
            "contains whitespace, '.' or ';'",
        ));
    }
    if method.ends_with(ZERO_PARAM_SUFFIX) {
        return Err(TraceError::InvalidMethod(
            method.into(),
            "ends with the reserved `_0` suffix",
        ));
    }
    let values = ParamVector::new(params, combined)?;
    let label = if values.is_empty() {
        Label::new(format!("{method}{ZERO_PARAM_SUFFIX}"))?
    } else {
        Label::new(method)?
    };
    Ok(TraceEvent { label, values })
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    #[default]
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trace {
    pub name: String,
    pub events: Vec<TraceEvent>,
    pub polarity: Polarity,
}

impl Trace {
    pub fn positive(name: impl Into<String>, events: Vec<TraceEvent>) -> Self {
        Trace {
            name: name.into(),
            events,
            polarity: Polarity::Positive,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Proof script text for this trace: `;` after combined steps, `.` otherwise.
    pub fn render_script(&self) -> String {
        render_events(&self.events)
    }
}

/// Renders events as a proof script: `method p1 … pn`, joined by `; ` after
/// combined steps and `. ` otherwise, with a final `.`.
pub fn render_events(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for (i, event) in events.iter().enumerate() {
        out.push_str(&event.render());
        if i + 1 == events.len() {
            out.push('.');
        } else if event.values.combined {
            out.push_str("; ");
        } else {
            out.push_str(". ");
        }
    }
    out
}

/// An ordered collection of uniquely named traces.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    traces: Vec<Trace>,
    pub source: String,
}

impl Corpus {
    /// Builds a corpus, renaming duplicate trace names to `name#2`, `name#3`, ...
    pub fn new(traces: Vec<Trace>, source: impl Into<String>) -> Self {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(traces.len());
        for mut trace in traces {
            if seen.contains(&trace.name) {
                let base = trace.name.clone();
                let mut n = 2;
                while seen.contains(&format!("{base}#{n}")) {
                    n += 1;
                }
                trace.name = format!("{base}#{n}");
            }
            seen.insert(trace.name.clone());
            out.push(trace);
        }
        Corpus {
            traces: out,
            source: source.into(),
        }
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn into_traces(self) -> Vec<Trace> {
        self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Trace> {
        self.traces.iter().find(|t| t.name == name)
    }

    pub fn positives(&self) -> impl Iterator<Item = &Trace> {
        self.traces
            .iter()
            .filter(|t| t.polarity == Polarity::Positive)
    }

    /// Total number of proof steps across all traces.
    pub fn event_count(&self) -> usize {
        self.traces.iter().map(Trace::len).sum()
    }

    /// A copy without the named trace, or `None` if no trace has that name.
    pub fn without(&self, name: &str) -> Option<Corpus> {
        let idx = self.traces.iter().position(|t| t.name == name)?;
        let mut traces = self.traces.clone();
        traces.remove(idx);
        Some(Corpus {
            traces,
            source: self.source.clone(),
        })
    }

    pub fn to_json(&self) -> Vec<u8> {
        corpus_to_json(self)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, TraceError> {
        corpus_from_json(bytes)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusDoc {
    version: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    source: String,
    traces: Vec<TraceDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceDoc {
    name: String,
    #[serde(default)]
    polarity: Polarity,
    events: Vec<EventDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventDoc {
    label: String,
    #[serde(default)]
    params: Vec<String>,
    #[serde(default)]
    combined: bool,
}

pub const TRACE_SCHEMA_VERSION: u64 = 1;

pub fn corpus_to_json(corpus: &Corpus) -> Vec<u8> {
    let doc = CorpusDoc {
        version: TRACE_SCHEMA_VERSION,
        source: corpus.source.clone(),
        traces: corpus
            .traces
            .iter()
            .map(|t| TraceDoc {
                name: t.name.clone(),
                polarity: t.polarity,
                events: t
                    .events
                    .iter()
                    .map(|e| EventDoc {
                        label: e.label.to_string(),
                        params: e.values.params.clone(),
                        combined: e.values.combined,
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_vec(&doc).expect("corpus document serializes")
}

pub fn corpus_from_json(bytes: &[u8]) -> Result<Corpus, TraceError> {
    let raw: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| TraceError::Malformed(e.to_string()))?;
    match raw.get("version").and_then(serde_json::Value::as_u64) {
        Some(TRACE_SCHEMA_VERSION) => {}
        Some(v) => return Err(TraceError::UnsupportedVersion(v)),
        None => return Err(TraceError::Malformed("missing integer `version`".into())),
    }
    let doc: CorpusDoc =
        serde_json::from_value(raw).map_err(|e| TraceError::Malformed(e.to_string()))?;
    let mut traces = Vec::with_capacity(doc.traces.len());
    for t in doc.traces {
        let mut events = Vec::with_capacity(t.events.len());
        for (i, e) in t.events.into_iter().enumerate() {
            let bad = |reason: String| TraceError::BadEvent {
                trace: t.name.clone(),
                event: i,
                reason,
            };
            let label = Label::new(e.label).map_err(|err| bad(err.to_string()))?;
            if e.params.iter().any(|p| p.trim().is_empty()) {
                return Err(bad("empty params entry".into()));
            }
            let values =
                ParamVector::new(&e.params, e.combined).map_err(|err| bad(err.to_string()))?;
            if values.is_empty() && !values.combined && !label.is_zero_param() {
                return Err(bad(format!(
                    "label {label} has no parameters but lacks the `_0` suffix"
                )));
            }
            events.push(TraceEvent { label, values });
        }
        traces.push(Trace {
            name: t.name,
            events,
            polarity: t.polarity,
        });
    }
    Ok(Corpus::new(traces, doc.source))
}
