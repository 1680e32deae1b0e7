//! Metrics, closed-loop replay and report tables.

pub mod judge;
pub mod metrics;
pub mod report;
pub mod runner;

pub use judge::{judge_consistency, Judge, JudgeOutcome, SlotJudge, DEFAULT_REPETITIONS};
pub use metrics::*;
pub use report::{Report, Table};
pub use runner::{replay, replay_reference, RunResult, Scores, TurnOutcome};
