//! Interactive walks over an inferred model.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::efsm::{Efsm, StateId};
use crate::guard::{Class, Prediction};
use crate::trace::{render_events, Label, ParamVector, TraceEvent};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GuidanceError {
    #[error("no `{label}` transition from state {state}; available: {}", join_labels(.available))]
    NoSuchLabel {
        label: Label,
        state: StateId,
        available: Vec<Label>,
    },
    #[error("nothing to undo")]
    EmptyHistory,
}

fn join_labels(labels: &[Label]) -> String {
    if labels.is_empty() {
        return "none".to_string();
    }
    labels
        .iter()
        .map(Label::as_str)
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Suggestion {
    pub label: Label,
    /// Witnessed parameter vectors, most frequent first. Zero-parameter
    /// witnesses are left out.
    pub parameter_candidates: Vec<ParamVector>,
    pub combined_hint: bool,
    pub leads_to_accepting: bool,
    pub target: StateId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Options {
    pub state: StateId,
    pub can_finish: bool,
    pub suggestions: Vec<Suggestion>,
}

/// Raised when the guards expect a continuation the new state cannot offer.
/// Advisories never block a step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Advisory {
    pub expected: Class,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Session {
    model: Arc<Efsm>,
    cursor: StateId,
    history: Vec<TraceEvent>,
}

impl Session {
    pub fn open(model: Arc<Efsm>) -> Self {
        let cursor = model.initial();
        Session {
            model,
            cursor,
            history: Vec::new(),
        }
    }

    pub fn model(&self) -> &Arc<Efsm> {
        &self.model
    }

    pub fn cursor(&self) -> StateId {
        self.cursor
    }

    pub fn history(&self) -> &[TraceEvent] {
        &self.history
    }

    pub fn is_accepting(&self) -> bool {
        self.model.is_accepting(self.cursor)
    }

    pub fn options(&self) -> Options {
        let suggestions = self
            .model
            .outgoing(self.cursor)
            .map(|t| Suggestion {
                label: t.label.clone(),
                parameter_candidates: t
                    .ranked_witnesses()
                    .into_iter()
                    .filter(|v| !v.is_empty())
                    .cloned()
                    .collect(),
                combined_hint: t.witnesses.keys().any(|v| v.combined),
                leads_to_accepting: self.model.is_accepting(t.target),
                target: t.target,
            })
            .collect();
        Options {
            state: self.cursor,
            can_finish: self.is_accepting(),
            suggestions,
        }
    }

    /// Labels leaving the cursor, in order.
    pub fn available(&self) -> Vec<Label> {
        let mut labels: Vec<Label> = self
            .model
            .outgoing(self.cursor)
            .map(|t| t.label.clone())
            .collect();
        labels.dedup();
        labels
    }

    /// Moves along the `label` transition. Parameters outside the witnesses
    /// are allowed; a guard advisory is returned when their predicted
    /// successor is missing at the new state.
    pub fn step(
        &mut self,
        label: Label,
        values: ParamVector,
    ) -> Result<Option<Advisory>, GuidanceError> {
        let event = TraceEvent { label, values };
        let Some(t) = self.model.step(self.cursor, &event) else {
            return Err(GuidanceError::NoSuchLabel {
                label: event.label,
                state: self.cursor,
                available: self.available(),
            });
        };
        let target = t.target;
        let advisory = match self.model.guards().predict(&event.label, &event.values) {
            Prediction::Class(Class::Next(next))
                if !self.model.has_outgoing_label(target, &next) =>
            {
                Some(Advisory {
                    message: format!(
                        "the guards expect `{next}` next, which state {target} does not offer"
                    ),
                    expected: Class::Next(next),
                })
            }
            Prediction::Class(Class::End) if !self.model.is_accepting(target) => Some(Advisory {
                message: format!(
                    "the guards expect the proof to end, but state {target} is not accepting"
                ),
                expected: Class::End,
            }),
            _ => None,
        };
        self.cursor = target;
        self.history.push(event);
        Ok(advisory)
    }

    /// Removes the last event and recomputes the cursor by replay.
    pub fn undo(&mut self) -> Result<TraceEvent, GuidanceError> {
        let last = self.history.pop().ok_or(GuidanceError::EmptyHistory)?;
        let history = std::mem::take(&mut self.history);
        self.cursor = self.model.initial();
        for event in history {
            self.step(event.label, event.values)
                .expect("a prefix of a valid history replays");
        }
        Ok(last)
    }

    /// Replays `events` from the initial state.
    pub fn replay(model: Arc<Efsm>, events: &[TraceEvent]) -> Result<Self, GuidanceError> {
        let mut session = Session::open(model);
        for e in events {
            session.step(e.label.clone(), e.values.clone())?;
        }
        Ok(session)
    }

    pub fn render_script(&self) -> String {
        render_events(&self.history)
    }
}
