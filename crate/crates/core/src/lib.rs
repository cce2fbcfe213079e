//! Mining extended finite state machines from Coq proof scripts.
//!
//! Proof scripts are parsed into traces of tactic events ([`parser`],
//! [`trace`]), decision trees over tactic parameters predict the next step
//! ([`guard`]), and guard-constrained state merging turns the prefix tree of
//! the corpus into a compact model ([`inference`], [`efsm`]). Models can be
//! cross-validated ([`evaluation`]) and walked interactively ([`guidance`],
//! [`service`]).

pub mod cli;
pub mod efsm;
pub mod evaluation;
pub mod guard;
pub mod guidance;
pub mod inference;
pub mod parser;
pub mod service;
pub mod trace;

pub use efsm::{walk, AcceptMode, Efsm, StateId};
pub use guard::GuardModel;
pub use inference::{infer, InferenceConfig};
pub use trace::{Corpus, Label, ParamVector, Trace, TraceEvent};
