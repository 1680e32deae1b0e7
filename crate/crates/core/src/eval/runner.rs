//! Closed-loop replay: every sample runs through a fresh orchestrator on its
//! own simulator, and each turn's prediction is kept next to its gold.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics;
use crate::datagen::{DialogueSample, SampleKind};
use crate::orchestrator::{Orchestrator, PipelineConfig};
use crate::retrieval::{self, Embedder, IntentSample, RecallPair, ToolIndex};
use crate::sim::OfficeSim;
use crate::types::{Plan, Session, ToolCall, WorkerLabel, NO_API};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub sample_id: String,
    pub kind: SampleKind,
    pub turn: usize,
    pub gold_related: bool,
    pub pred_related: bool,
    pub gold_rewritten: String,
    pub pred_rewritten: String,
    pub gold_intent: WorkerLabel,
    pub pred_intent: Option<WorkerLabel>,
    pub gold_plan: Option<Plan>,
    pub pred_plan: Option<Plan>,
    pub gold_calls: Vec<ToolCall>,
    pub pred_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TurnOutcome {
    pub fn exact(&self) -> bool {
        self.error.is_none()
            && self.pred_related == self.gold_related
            && self.pred_rewritten == self.gold_rewritten
            && self.pred_intent == Some(self.gold_intent)
            && self.pred_plan == self.gold_plan
            && self.pred_calls == self.gold_calls
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub samples: usize,
    pub turns: usize,
    pub relate_acc: f64,
    pub rewrite_rouge_l: f64,
    pub rewrite_bleu: f64,
    pub sub_tasks_num_acc: f64,
    pub api_acc: f64,
    pub planner_rouge: f64,
    pub strict_accuracy: f64,
    pub call_api_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub outcomes: Vec<TurnOutcome>,
}

fn replay_sample(sample: &DialogueSample, orch: &Orchestrator, window: usize) -> Vec<TurnOutcome> {
    let mut session = Session::new(sample.id.clone(), window);
    let mut out = Vec::with_capacity(sample.turns.len());
    for (i, gold) in sample.turns.iter().enumerate() {
        let mut o = TurnOutcome {
            sample_id: sample.id.clone(),
            kind: sample.kind,
            turn: i + 1,
            gold_related: gold.gold_related,
            pred_related: false,
            gold_rewritten: gold.gold_rewritten.clone(),
            pred_rewritten: String::new(),
            gold_intent: gold.gold_intent,
            pred_intent: None,
            gold_plan: gold.gold_plan.clone(),
            pred_plan: None,
            gold_calls: gold.gold_calls.clone(),
            pred_calls: Vec::new(),
            error: None,
        };
        match orch.handle_turn(&mut session, &gold.user_text) {
            Ok(trace) => {
                let t = &trace.turn;
                o.pred_related = t.related;
                o.pred_rewritten = t.rewritten_query.clone();
                o.pred_intent = Some(t.intent);
                o.pred_plan = t.plan.clone();
                o.pred_calls = t.final_calls().into_iter().map(|c| c.call.clone()).collect();
                o.error = t.error.clone();
            }
            Err(e) => o.error = Some(e.to_string()),
        }
        out.push(o);
    }
    out
}

/// Replays samples in parallel; `build` wires the pipeline around each
/// sample's fresh simulator.
pub fn replay<F>(samples: &[DialogueSample], fixture: &str, window: usize, build: F) -> Result<RunResult>
where
    F: Fn(Arc<OfficeSim>) -> Orchestrator + Sync,
{
    let per_sample: Vec<Vec<TurnOutcome>> = samples
        .par_iter()
        .map(|s| {
            let sim = Arc::new(OfficeSim::named(fixture, 0)?);
            Ok(replay_sample(s, &build(sim), window))
        })
        .collect::<Result<_>>()?;
    Ok(RunResult { outcomes: per_sample.into_iter().flatten().collect() })
}

/// Replay on the reference backends over fixture F1.
pub fn replay_reference(samples: &[DialogueSample], config: PipelineConfig) -> Result<RunResult> {
    replay(samples, "F1", config.window, |sim| Orchestrator::reference(sim, config))
}

impl RunResult {
    pub fn mismatches(&self) -> impl Iterator<Item = &TurnOutcome> {
        self.outcomes.iter().filter(|o| !o.exact())
    }

    /// Plan metrics cover turns where either side planned; call metrics
    /// cover turns where either side called a tool.
    pub fn scores(&self) -> Result<Scores> {
        let o = &self.outcomes;
        let pred_rel: Vec<bool> = o.iter().map(|t| t.pred_related).collect();
        let gold_rel: Vec<bool> = o.iter().map(|t| t.gold_related).collect();
        let n = o.len().max(1) as f64;
        let rewrite_rouge_l = o.iter().map(|t| metrics::rouge_l(&t.gold_rewritten, &t.pred_rewritten)).sum::<f64>() / n;
        let rewrite_bleu = o.iter().map(|t| metrics::bleu(&t.gold_rewritten, &t.pred_rewritten)).sum::<f64>() / n;
        let (pred_plans, gold_plans): (Vec<Plan>, Vec<Plan>) = o
            .iter()
            .filter(|t| t.gold_plan.is_some() || t.pred_plan.is_some())
            .map(|t| (t.pred_plan.clone().unwrap_or_default(), t.gold_plan.clone().unwrap_or_default()))
            .unzip();
        let (pred_calls, gold_calls): (Vec<Vec<ToolCall>>, Vec<Vec<ToolCall>>) = o
            .iter()
            .filter(|t| !t.gold_calls.is_empty() || !t.pred_calls.is_empty())
            .map(|t| (t.pred_calls.clone(), t.gold_calls.clone()))
            .unzip();
        let mut ids: Vec<&str> = o.iter().map(|t| t.sample_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        Ok(Scores {
            samples: ids.len(),
            turns: o.len(),
            relate_acc: metrics::relate_acc(&pred_rel, &gold_rel)?,
            rewrite_rouge_l: if o.is_empty() { 1.0 } else { rewrite_rouge_l },
            rewrite_bleu: if o.is_empty() { 1.0 } else { rewrite_bleu },
            sub_tasks_num_acc: metrics::sub_tasks_num_acc(&pred_plans, &gold_plans)?,
            api_acc: metrics::api_acc(&pred_plans, &gold_plans)?,
            planner_rouge: metrics::planner_rouge(&pred_plans, &gold_plans)?,
            strict_accuracy: metrics::strict_accuracy(&pred_calls, &gold_calls)?,
            call_api_acc: metrics::call_api_acc(&pred_calls, &gold_calls)?,
        })
    }

    /// (gold, predicted) rewrites for the consistency judge.
    pub fn rewrite_pairs(&self) -> Vec<(String, String)> {
        self.outcomes.iter().map(|t| (t.gold_rewritten.clone(), t.pred_rewritten.clone())).collect()
    }
}

/// Tool-using turns of the samples as intent samples for pair building.
pub fn intent_samples(samples: &[DialogueSample]) -> Vec<IntentSample> {
    let mut out = Vec::new();
    for s in samples {
        for t in &s.turns {
            let Some(plan) = &t.gold_plan else { continue };
            let clauses: Vec<(String, String)> = plan
                .sub_tasks
                .iter()
                .filter(|st| st.api_name != NO_API)
                .map(|st| (st.text.clone(), st.api_name.clone()))
                .collect();
            if !clauses.is_empty() {
                out.push(IntentSample { query: t.gold_rewritten.clone(), clauses });
            }
        }
    }
    out
}

/// Single-intent test pairs (one tool) and multi-intent pairs (several),
/// each query carrying every gold tool as a positive.
pub fn recall_sets(samples: &[DialogueSample], seed: u64) -> Result<(Vec<RecallPair>, Vec<RecallPair>)> {
    let intents = intent_samples(samples);
    let (single, multi): (Vec<_>, Vec<_>) = intents.into_iter().partition(|s| s.clauses.len() == 1);
    Ok((retrieval::build_pairs_v2(&single, seed)?, retrieval::build_pairs_v2(&multi, seed)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub label: String,
    pub single_top3: f64,
    pub single_top5: f64,
    pub multi_top3: f64,
    pub multi_top5: f64,
}

pub fn recall_row(
    label: &str,
    index: &ToolIndex,
    embedder: &dyn Embedder,
    single: &[RecallPair],
    multi: &[RecallPair],
) -> Result<RecallRow> {
    Ok(RecallRow {
        label: label.into(),
        single_top3: retrieval::eval_recall(index, embedder, single, 3)?,
        single_top5: retrieval::eval_recall(index, embedder, single, 5)?,
        multi_top3: retrieval::eval_recall(index, embedder, multi, 3)?,
        multi_top5: retrieval::eval_recall(index, embedder, multi, 5)?,
    })
}
