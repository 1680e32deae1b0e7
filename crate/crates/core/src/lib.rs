//! Master/worker office assistant.
//!
//! A master node rewrites each user message against session memory, routes it
//! to a worker agent, and for office requests runs retrieval, a planner and a
//! solver against a deterministic office simulator. The same shared utterance
//! grammar drives the reference backends and the synthetic data generator, so
//! generated datasets can be replayed through the pipeline and scored.

pub mod catalog;
pub mod datagen;
pub mod endpoint;
pub mod error;
pub mod eval;
pub mod grammar;
pub mod memory;
pub mod orchestrator;
pub mod planner;
pub mod records;
pub mod retrieval;
pub mod rewrite;
pub mod scenarios;
pub mod sim;
pub mod solver;
pub mod timeexpr;
pub mod transitions;
pub mod types;

pub use error::{Error, Result};
