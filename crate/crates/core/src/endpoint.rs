//! Model-backed rewrite, plan, solve and judge backends.
//!
//! Each backend renders a prompt, sends it through a [`ModelClient`] with one
//! retry, and parses the reply. When the client is missing, fails twice, or
//! the reply does not parse, the backend falls back to the reference
//! implementation and says so in the turn notes.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::error::{Error, Result};
use crate::eval::Judge;
use crate::planner::{self, PlannerBackend, RulePlanner};
use crate::rewrite::{RewriteBackend, RewriteOutput, RuleRewriter};
use crate::solver::{RuleSolver, SolveContext, SolveOutcome, SolverBackend};
use crate::types::{Args, Plan, SessionMemory, SubTask, ToolCall, ToolSpec, WorkerLabel, NO_API};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Rewrite,
    Plan,
    Solve,
    Judge,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Rewrite => "rewrite",
            Role::Plan => "plan",
            Role::Solve => "solve",
            Role::Judge => "judge",
        })
    }
}

/// One request/response exchange with a model endpoint. Implementations own
/// the transport and its timeout.
pub trait ModelClient: Send + Sync {
    fn complete(&self, role: Role, prompt: &str) -> Result<String>;
}

/// Sends the prompt, retrying once; returns the reply or both failures.
pub fn call_with_retry(client: &dyn ModelClient, role: Role, prompt: &str) -> std::result::Result<String, Vec<String>> {
    let mut failures = Vec::new();
    for _ in 0..2 {
        match client.complete(role, prompt) {
            Ok(text) => return Ok(text),
            Err(e) => failures.push(e.to_string()),
        }
    }
    Err(failures)
}

/// Asks the model and parses its reply; any failure yields the notes that
/// explain why the reference backend took over.
fn ask<T>(
    client: Option<&Arc<dyn ModelClient>>,
    role: Role,
    prompt: impl FnOnce() -> String,
    parse: impl FnOnce(&str) -> Result<T>,
) -> std::result::Result<T, Vec<String>> {
    let Some(client) = client else {
        return Err(vec![format!("{role}: no endpoint configured, reference backend used")]);
    };
    let text = call_with_retry(client.as_ref(), role, &prompt()).map_err(|fails| {
        let joined = fails.join("; ");
        log::warn!("{role} endpoint failed twice: {joined}");
        vec![format!("warning: {role} endpoint failed twice ({joined}), reference backend used")]
    })?;
    parse(&text).map_err(|e| vec![format!("{role}: unparseable reply ({e}), reference backend used")])
}

/// The first `{...}` object in a reply, allowing prose around it.
fn json_object(text: &str) -> Result<serde_json::Value> {
    let start = text.find('{').ok_or_else(|| Error::parse("reply", "no JSON object"))?;
    let end = text.rfind('}').ok_or_else(|| Error::parse("reply", "no JSON object"))?;
    if end < start {
        return Err(Error::parse("reply", "no JSON object"));
    }
    serde_json::from_str(&text[start..=end]).map_err(|e| Error::parse(format!("reply column {}", e.column()), e.to_string()))
}

fn history(memory: &SessionMemory) -> String {
    let mut out = String::new();
    for t in &memory.turn_window {
        out.push_str(&format!("user: {}\nrewritten: {}\nassistant: {}\n", t.user_query, t.rewritten_query, t.reply));
    }
    if !memory.entity_slots.is_empty() {
        out.push_str("slots:\n");
        for (k, v) in &memory.entity_slots {
            out.push_str(&format!("  {k} = {v}\n"));
        }
    }
    out
}

pub fn rewrite_prompt(memory: &SessionMemory, query: &str) -> String {
    format!(
        "You rewrite the latest user message of an office assistant dialogue into a standalone request.\n\
         Decide whether it depends on the earlier turns, resolve pronouns and omissions from them, and pick the worker:\n\
         one of chitchat, text_to_image, online_search, wps365.\n\
         Reply with JSON: {{\"related\": bool, \"rewritten\": string, \"intent\": string}}\n\n\
         Dialogue so far:\n{}\nLatest message: {query}\n",
        history(memory)
    )
}

pub fn parse_rewrite(text: &str) -> Result<RewriteOutput> {
    let v = json_object(text)?;
    let related = v["related"].as_bool().ok_or_else(|| Error::parse("reply", "related must be a boolean"))?;
    let rewritten = v["rewritten"].as_str().ok_or_else(|| Error::parse("reply", "rewritten must be a string"))?;
    let intent = v["intent"].as_str().and_then(WorkerLabel::parse).ok_or_else(|| Error::parse("reply", "unknown intent"))?;
    if rewritten.trim().is_empty() {
        return Err(Error::parse("reply", "empty rewrite"));
    }
    Ok(RewriteOutput { related, rewritten: rewritten.trim().to_string(), intent })
}

pub fn plan_prompt(rewritten: &str, candidates: &[String]) -> String {
    let mut tools = String::new();
    for c in candidates {
        if let Some(t) = catalog::tool(c) {
            tools.push_str(&format!("- {}: {}\n", t.name, t.description));
        }
    }
    format!(
        "Split the request into sub-tasks, one tool each, using only these tools (or none):\n{tools}\n\
         Write one line per sub-task as `#Ek = api[clause]`, numbering from #E1. A clause may refer to the\n\
         result of an earlier sub-task by its #E id.\n\nRequest: {rewritten}\n"
    )
}

pub fn parse_plan_reply(text: &str, candidates: &[String]) -> Result<Plan> {
    let plan = planner::restrict_to_candidates(planner::parse_plan(text)?, candidates);
    if plan.sub_tasks.is_empty() {
        return Err(Error::parse("reply", "empty plan"));
    }
    plan.check().map_err(|e| Error::parse("reply", e))?;
    Ok(plan)
}

pub fn solve_prompt(sub_task: &SubTask, spec: &ToolSpec, ctx: &SolveContext) -> String {
    let mut params = String::new();
    for p in &spec.params {
        let req = if p.required { "required" } else { "optional" };
        params.push_str(&format!("- {} ({:?}, {req}): {}\n", p.name, p.value_kind, p.description));
    }
    let mut evidence = String::new();
    for (id, r) in ctx.evidence {
        evidence.push_str(&format!("{id}: {}\n", serde_json::to_string(r).unwrap_or_default()));
    }
    format!(
        "Fill the arguments of {} for the sub-task below. Datetimes are ISO 8601; it is now {}.\n\
         Parameters:\n{params}\nEarlier results:\n{evidence}\nMemory:\n{}\n\
         Reply with a JSON object of argument names to values.\n\nSub-task: {}\n",
        spec.name,
        crate::types::fmt_datetime(ctx.now),
        history(ctx.memory),
        sub_task.text
    )
}

pub fn parse_solve_reply(text: &str, spec: &ToolSpec) -> Result<ToolCall> {
    let v = json_object(text)?;
    let args: Args = serde_json::from_value(v).map_err(|e| Error::parse("reply", e.to_string()))?;
    let call = ToolCall { api_name: spec.name.clone(), args };
    let report = catalog::validate_call(spec, &call)?;
    if !report.violations.is_empty() {
        return Err(Error::parse("reply", format!("{:?}", report.violations)));
    }
    Ok(call)
}

pub fn judge_prompt(gold: &str, hypothesis: &str) -> String {
    format!(
        "Does the candidate rewrite ask for exactly the same thing as the reference, with the same values?\n\
         Reply with a single number between 0 and 1.\n\nReference: {gold}\nCandidate: {hypothesis}\n"
    )
}

pub fn parse_judge_reply(text: &str) -> Result<f64> {
    let s: f64 = text.trim().parse().map_err(|_| Error::parse("reply", format!("not a score: {text:?}")))?;
    if (0.0..=1.0).contains(&s) {
        Ok(s)
    } else {
        Err(Error::parse("reply", format!("score {s} outside [0, 1]")))
    }
}

#[derive(Clone, Default)]
pub struct ModelRewriter {
    pub client: Option<Arc<dyn ModelClient>>,
}

impl RewriteBackend for ModelRewriter {
    fn name(&self) -> &str {
        "endpoint"
    }

    fn rewrite(&self, memory: &SessionMemory, query: &str) -> RewriteOutput {
        self.rewrite_noted(memory, query).0
    }

    fn rewrite_noted(&self, memory: &SessionMemory, query: &str) -> (RewriteOutput, Vec<String>) {
        match ask(self.client.as_ref(), Role::Rewrite, || rewrite_prompt(memory, query), parse_rewrite) {
            Ok(out) => (out, Vec::new()),
            Err(notes) => (RuleRewriter.rewrite(memory, query), notes),
        }
    }
}

#[derive(Clone, Default)]
pub struct ModelPlanner {
    pub client: Option<Arc<dyn ModelClient>>,
}

impl PlannerBackend for ModelPlanner {
    fn name(&self) -> &str {
        "endpoint"
    }

    fn plan(&self, rewritten: &str, candidates: &[String], memory: &SessionMemory) -> Plan {
        self.plan_noted(rewritten, candidates, memory).0
    }

    fn plan_noted(&self, rewritten: &str, candidates: &[String], memory: &SessionMemory) -> (Plan, Vec<String>) {
        let parse = |t: &str| parse_plan_reply(t, candidates);
        match ask(self.client.as_ref(), Role::Plan, || plan_prompt(rewritten, candidates), parse) {
            Ok(plan) => (plan, Vec::new()),
            Err(notes) => (RulePlanner.plan(rewritten, candidates, memory), notes),
        }
    }
}

#[derive(Clone, Default)]
pub struct ModelSolver {
    pub client: Option<Arc<dyn ModelClient>>,
}

impl SolverBackend for ModelSolver {
    fn name(&self) -> &str {
        "endpoint"
    }

    fn solve(&self, sub_task: &SubTask, spec: &ToolSpec, ctx: &SolveContext) -> SolveOutcome {
        self.solve_noted(sub_task, spec, ctx).0
    }

    fn solve_noted(&self, sub_task: &SubTask, spec: &ToolSpec, ctx: &SolveContext) -> (SolveOutcome, Vec<String>) {
        if sub_task.api_name == NO_API {
            return (RuleSolver.solve(sub_task, spec, ctx), Vec::new());
        }
        let parse = |t: &str| parse_solve_reply(t, spec);
        match ask(self.client.as_ref(), Role::Solve, || solve_prompt(sub_task, spec, ctx), parse) {
            Ok(call) => (SolveOutcome::Call { call }, Vec::new()),
            Err(notes) => (RuleSolver.solve(sub_task, spec, ctx), notes),
        }
    }
}

/// A judge asking a model for a consistency score. Failures surface as
/// errors so the eval harness can skip the metric with a notice.
#[derive(Clone)]
pub struct ModelJudge {
    pub client: Arc<dyn ModelClient>,
}

impl Judge for ModelJudge {
    fn name(&self) -> &str {
        "endpoint"
    }

    fn judge(&self, gold: &str, hypothesis: &str) -> Result<f64> {
        let text = call_with_retry(self.client.as_ref(), Role::Judge, &judge_prompt(gold, hypothesis))
            .map_err(|f| Error::Endpoint(f.join("; ")))?;
        parse_judge_reply(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Replies from a script, recording every prompt.
    struct Scripted {
        replies: Mutex<Vec<Result<String>>>,
        prompts: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<String>>) -> Arc<Self> {
            Arc::new(Scripted { replies: Mutex::new(replies), prompts: Mutex::new(Vec::new()) })
        }
    }

    impl ModelClient for Scripted {
        fn complete(&self, _: Role, prompt: &str) -> Result<String> {
            self.prompts.lock().unwrap().push(prompt.to_string());
            let mut r = self.replies.lock().unwrap();
            if r.is_empty() {
                Err(Error::Endpoint("script exhausted".into()))
            } else {
                r.remove(0)
            }
        }
    }

    fn timeout() -> Result<String> {
        Err(Error::Endpoint("timed out".into()))
    }

    #[test]
    fn rewrite_paths() {
        let mem = SessionMemory::default();
        let q = "Find the todos";
        let unconfigured = ModelRewriter::default().rewrite_noted(&mem, q);
        assert_eq!(unconfigured.0, RuleRewriter.rewrite(&mem, q));
        assert!(unconfigured.1[0].contains("no endpoint configured"));

        let ok = Scripted::new(vec![
            timeout(),
            Ok("sure: {\"related\": false, \"rewritten\": \"List my todos\", \"intent\": \"wps365\"}".into()),
        ]);
        let (out, notes) = ModelRewriter { client: Some(ok.clone()) }.rewrite_noted(&mem, q);
        assert_eq!(out.rewritten, "List my todos");
        assert!(notes.is_empty());
        assert_eq!(ok.prompts.lock().unwrap().len(), 2);

        let down = Scripted::new(vec![timeout(), timeout()]);
        let (out, notes) = ModelRewriter { client: Some(down) }.rewrite_noted(&mem, q);
        assert_eq!(out, RuleRewriter.rewrite(&mem, q));
        assert!(notes[0].starts_with("warning: rewrite endpoint failed twice"));
    }

    #[test]
    fn plan_and_solve_parsers() {
        let cands = vec!["find_todo".to_string(), "delete_todo".to_string()];
        let plan = parse_plan_reply("#E1 = find_todo[Find the todos]\n#E2 = delete_todo[Delete #E1]", &cands).unwrap();
        assert_eq!(plan.apis(), ["find_todo", "delete_todo"]);
        assert_eq!(plan.sub_tasks[1].depends_on, ["#E1"]);
        assert!(parse_plan_reply("no plan here", &cands).is_err());

        let spec = catalog::tool("delete_todo").unwrap();
        let call = parse_solve_reply("{\"todo_ids\": [\"t1\"]}", spec).unwrap();
        assert_eq!(call.args["todo_ids"], crate::types::Value::list(["t1"]));
        assert!(parse_solve_reply("{\"todo_ids\": 3}", spec).is_err());
        assert_eq!(parse_judge_reply(" 0.5\n").unwrap(), 0.5);
        assert!(parse_judge_reply("2").is_err());
    }
}
