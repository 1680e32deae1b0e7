//! Rewrite consistency judged by a pluggable scorer, repeated and reported
//! as mean and spread.

use serde::{Deserialize, Serialize};

use crate::grammar::{self, RawArgs};
use crate::{Error, Result};

pub const DEFAULT_REPETITIONS: usize = 3;

pub trait Judge: Send + Sync {
    fn name(&self) -> &str;
    /// Score in [0, 1] for how well `hypothesis` preserves `gold`.
    fn judge(&self, gold: &str, hypothesis: &str) -> Result<f64>;
}

/// 1.0 when both texts carry the same clauses with the same slot values,
/// else 0.0. Text the grammar does not recognize is compared token by token.
#[derive(Debug, Clone, Copy, Default)]
pub struct SlotJudge;

fn slots(text: &str) -> Option<Vec<(String, RawArgs)>> {
    grammar::split_clauses(text).iter().map(|c| grammar::parse_clause(c).map(|p| (p.api, p.args))).collect()
}

fn folded(text: &str) -> Vec<String> {
    super::metrics::Tokenizer::WordPunct.tokens(text).iter().map(|t| t.to_lowercase()).collect()
}

impl Judge for SlotJudge {
    fn name(&self) -> &str {
        "slot"
    }

    fn judge(&self, gold: &str, hypothesis: &str) -> Result<f64> {
        let same = match (slots(gold), slots(hypothesis)) {
            (Some(g), Some(h)) => g == h,
            _ => folded(gold) == folded(hypothesis),
        };
        Ok(if same { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JudgeOutcome {
    Scored { judge: String, mean: f64, spread: f64, runs: Vec<f64> },
    Skipped { judge: String, notice: String },
}

impl JudgeOutcome {
    pub fn display(&self) -> String {
        match self {
            JudgeOutcome::Scored { mean, spread, .. } => format!("{mean:.4}±{spread:.4}"),
            JudgeOutcome::Skipped { .. } => "skipped".into(),
        }
    }
}

/// Runs the judge over every pair `repetitions` times. Each run's score is
/// the mean over pairs; the spread is the population standard deviation of
/// the run scores. An unavailable judge skips the metric instead of failing.
pub fn judge_consistency(pairs: &[(String, String)], judge: &dyn Judge, repetitions: usize) -> Result<JudgeOutcome> {
    if repetitions == 0 {
        return Err(Error::Usage("judge_consistency needs at least one repetition".into()));
    }
    let mut runs = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let mut sum = 0.0;
        for (gold, hyp) in pairs {
            match judge.judge(gold, hyp) {
                Ok(s) => sum += s.clamp(0.0, 1.0),
                Err(e) => {
                    let notice = format!("judge {} unavailable: {e}", judge.name());
                    log::warn!("{notice}");
                    return Ok(JudgeOutcome::Skipped { judge: judge.name().into(), notice });
                }
            }
        }
        runs.push(if pairs.is_empty() { 1.0 } else { sum / pairs.len() as f64 });
    }
    let mean = runs.iter().sum::<f64>() / runs.len() as f64;
    let var = runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / runs.len() as f64;
    Ok(JudgeOutcome::Scored { judge: judge.name().into(), mean, spread: var.sqrt(), runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Down;
    impl Judge for Down {
        fn name(&self) -> &str {
            "down"
        }
        fn judge(&self, _: &str, _: &str) -> Result<f64> {
            Err(Error::Endpoint("connection refused".into()))
        }
    }

    #[test]
    fn slot_judge() {
        let a = "Create a todo titled \"buy milk\"";
        let pairs = vec![(a.to_string(), a.to_string())];
        let out = judge_consistency(&pairs, &SlotJudge, 3).unwrap();
        assert_eq!(out, JudgeOutcome::Scored { judge: "slot".into(), mean: 1.0, spread: 0.0, runs: vec![1.0; 3] });
        assert_eq!(out.display(), "1.0000±0.0000");
        assert_eq!(SlotJudge.judge(a, "Create a todo titled \"buy eggs\"").unwrap(), 0.0);
        assert!(matches!(judge_consistency(&pairs, &Down, 3).unwrap(), JudgeOutcome::Skipped { .. }));
    }
}
