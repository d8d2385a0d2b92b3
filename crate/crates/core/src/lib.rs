//! A task-oriented dialogue pipeline that conditions every turn on the current
//! user utterance plus tracked domain and belief states, instead of the whole
//! dialogue history.
//!
//! Per turn the shared context encoder is called three times: on the belief
//! context (utterance, previous domain and belief state), on the action context
//! (new states plus DB result), and on the response context (additionally the
//! system action). See [`pipeline::run_turn`].

pub mod cli;
pub mod corpus;
pub mod database;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod ontology;
pub mod pipeline;
pub mod profiler;
pub mod schema;
pub mod state;
pub mod training;
pub mod world;

#[cfg(test)]
pub(crate) mod fixtures;

pub use error::{Error, Result};
