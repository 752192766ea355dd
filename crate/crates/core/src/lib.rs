//! Protocol core for multi-agent question answering over long videos.
//!
//! A committee of vision-language agents is picked by pseudo-label agreement, then each
//! question runs in rounds: every active agent chooses frames, answers with a reason,
//! and a strict-majority vote ends the session early. Without a majority, agents score
//! each other's answers, the lowest-scored agent leaves, and the round's digest seeds
//! the next round's frame retrieval.
//!
//! The crate is `no_std` with `alloc`; network clients, file formats and the CLI live in
//! the `vidpanel` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod agents;
pub mod deliberation;
pub mod domain;
pub mod harness;
pub mod longvr;
pub mod orchestrator;
pub mod perception;
pub mod prompt;
pub mod seed;
pub mod selection;

pub use agents::{AgentBackend, AgentProfile, AgentRequest, BackendError, BackendKind, BackendRouter};
pub use domain::{Answer, OptionLetter, QaTask};
pub use orchestrator::{run_question, FinalAnswer, RunConfig, SessionOutcome, TerminalPolicy, TraceEvent};
pub use perception::{PerceptionConfig, SimilarityScorer};
