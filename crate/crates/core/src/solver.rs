//! Argument extraction for one sub-task, and the repair pass.
//!
//! Values come from, in order: the clause itself, the results of the
//! sub-tasks it depends on, and session memory. Relative datetimes are
//! resolved against the simulator clock. A sub-task whose single-valued id
//! refers to evidence holding several records fans out into one call per
//! record ("Delete all meetings #E1").

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::error::{Error, Result};
use crate::grammar::{self, RawArgs, RawValue};
use crate::rewrite::ellipsis_slot;
use crate::timeexpr;
use crate::types::{fmt_datetime, Args, SessionMemory, SubTask, ToolCall, ToolResult, ToolSpec, Value, ValueKind, NO_API};

/// What the solver sees besides the sub-task.
#[derive(Debug, Clone, Copy)]
pub struct SolveContext<'a> {
    pub memory: &'a SessionMemory,
    /// Results of earlier sub-tasks by evidence id.
    pub evidence: &'a BTreeMap<String, ToolResult>,
    pub now: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SolveOutcome {
    Call {
        call: ToolCall,
    },
    FanOut {
        calls: Vec<ToolCall>,
    },
    /// Required parameters nobody could supply.
    Clarify {
        api_name: String,
        missing: Vec<String>,
    },
    /// Sub-task without a tool.
    PassThrough {
        text: String,
    },
}

impl SolveOutcome {
    pub fn calls(&self) -> Vec<&ToolCall> {
        match self {
            SolveOutcome::Call { call } => vec![call],
            SolveOutcome::FanOut { calls } => calls.iter().collect(),
            _ => vec![],
        }
    }
}

pub trait SolverBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, sub_task: &SubTask, spec: &ToolSpec, ctx: &SolveContext) -> SolveOutcome;

    fn solve_noted(&self, sub_task: &SubTask, spec: &ToolSpec, ctx: &SolveContext) -> (SolveOutcome, Vec<String>) {
        (self.solve(sub_task, spec, ctx), Vec::new())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleSolver;

impl SolverBackend for RuleSolver {
    fn name(&self) -> &str {
        "reference"
    }

    fn solve(&self, sub_task: &SubTask, spec: &ToolSpec, ctx: &SolveContext) -> SolveOutcome {
        solve_rule(sub_task, spec, ctx)
    }
}

/// Typed value of a raw surface value for a parameter of `kind`.
pub fn typed_value(kind: ValueKind, raw: &RawValue, now: NaiveDateTime) -> Option<Value> {
    let datetime = |s: &str| timeexpr::parse_datetime_expr(s, now).map(Value::datetime);
    match (kind, raw) {
        (_, RawValue::Placeholder(_)) => None,
        (ValueKind::Datetime, RawValue::Text(s)) => datetime(s),
        (ValueKind::DatetimeRange, RawValue::List(l)) if l.len() == 2 => {
            let a = timeexpr::parse_datetime_expr(&l[0], now)?;
            let b = timeexpr::parse_datetime_expr(&l[1], now)?;
            Some(Value::List(vec![fmt_datetime(a), fmt_datetime(b)]))
        }
        (ValueKind::Integer, RawValue::Int(i)) => Some(Value::Int(*i)),
        (ValueKind::Integer, RawValue::Text(s)) => s.trim().parse().ok().map(Value::Int),
        (ValueKind::Boolean, RawValue::Bool(b)) => Some(Value::Bool(*b)),
        (k, RawValue::List(l)) if k.is_list() => Some(Value::List(l.clone())),
        (k, RawValue::Text(s)) if k.is_list() => Some(Value::List(vec![s.clone()])),
        (ValueKind::DatetimeRange, _) => None,
        (_, RawValue::Text(s)) => Some(Value::Text(s.clone())),
        _ => None,
    }
}

/// Typed arguments for raw arguments without references; `None` if any
/// value does not resolve.
pub fn typed_args(api: &str, raw: &RawArgs, now: NaiveDateTime) -> Option<Args> {
    let spec = catalog::tool(api)?;
    raw.iter()
        .map(|(k, v)| {
            let p = spec.param(k)?;
            if !v.evidence_refs().is_empty() {
                return None;
            }
            Some((k.clone(), typed_value(p.value_kind, v, now)?))
        })
        .collect()
}

/// Subject derived from an email body: its first clause, at most 8 words.
pub fn derive_subject(body: &str) -> String {
    let first = body.split(['.', ',', '!', '?', ';', '\n']).map(str::trim).find(|s| !s.is_empty()).unwrap_or("");
    let words: Vec<&str> = first.split_whitespace().take(8).collect();
    if words.is_empty() {
        "(no subject)".into()
    } else {
        words.join(" ")
    }
}

/// Schedule id for a description, matched against the remembered schedule.
fn schedule_from_description(text: &str, ctx: &SolveContext) -> Option<String> {
    let d = grammar::parse_schedule_ref(text, ctx.now)?;
    let m = ctx.memory;
    let title = m.slot_text("schedule_title")?;
    let start = m.slot("schedule_start")?.as_datetime()?;
    let is_meeting = m.slot("schedule_is_meeting").and_then(Value::as_bool).unwrap_or(false);
    (title.eq_ignore_ascii_case(&d.title) && start == d.start && is_meeting == d.is_meeting)
        .then(|| m.slot_text("schedule_id").map(str::to_string))
        .flatten()
}

/// Resolution of one parameter: a value, several alternatives for a
/// fan-out, or nothing.
enum Resolved {
    One(Value),
    Many(Vec<Value>),
    None,
}

fn from_evidence(api: &str, param: &str, refs: &[String], ctx: &SolveContext) -> Resolved {
    let Some(kind) = catalog::tool(api).and_then(|s| s.param(param)).map(|p| p.value_kind) else {
        return Resolved::None;
    };
    for r in refs.iter().rev() {
        let Some(payload) = ctx.evidence.get(r).and_then(|res| res.payload.as_ref()) else { continue };
        if kind == ValueKind::Id && grammar::evidence_sources(api, param).contains(&"schedules") {
            let ids = payload.ids();
            if ids.len() > 1 && grammar::evidence_value(api, param, payload).is_some() {
                return Resolved::Many(ids.into_iter().map(Value::Text).collect());
            }
        }
        if let Some(v) = grammar::evidence_value(api, param, payload) {
            return Resolved::One(v);
        }
    }
    Resolved::None
}

fn from_memory(slot: &str, kind: ValueKind, m: &SessionMemory) -> Option<Value> {
    let v = m.slot(slot)?;
    match (kind, v) {
        (k, Value::List(l)) if k.is_list() && !l.is_empty() => Some(v.clone()),
        (k, Value::Text(t)) if k.is_list() => Some(Value::List(vec![t.clone()])),
        (ValueKind::Id, Value::List(l)) => l.first().cloned().map(Value::Text),
        (_, Value::Text(_)) => Some(v.clone()),
        _ => None,
    }
}

struct Extraction {
    args: Args,
    fan: Option<(String, Vec<Value>)>,
    unresolved: Vec<String>,
}

fn extract(sub_task: &SubTask, spec: &ToolSpec, ctx: &SolveContext, wanted: Option<&[&str]>) -> Extraction {
    let parsed = grammar::parse_clause(&sub_task.text).filter(|p| p.api == spec.name);
    let (raw, context) = match &parsed {
        Some(p) => (p.args.clone(), p.context.clone()),
        None => (RawArgs::new(), vec![]),
    };
    let mut ex = Extraction { args: Args::new(), fan: None, unresolved: vec![] };
    for p in &spec.params {
        let name = p.name.as_str();
        if wanted.is_some_and(|w| !w.contains(&name)) {
            continue;
        }
        let deictic_slot = context.iter().find(|(cp, _)| cp == name).map(|(_, s)| s.clone());
        let resolved = match raw.get(name) {
            Some(RawValue::Placeholder(_)) => Resolved::None,
            Some(v) if !v.evidence_refs().is_empty() => from_evidence(&spec.name, name, &v.evidence_refs(), ctx),
            Some(RawValue::Text(t)) if name == "schedule_id" && !grammar::is_schedule_id(t) => {
                schedule_from_description(t, ctx).map_or(Resolved::None, |id| Resolved::One(Value::Text(id)))
            }
            Some(v) => typed_value(p.value_kind, v, ctx.now).map_or(Resolved::None, Resolved::One),
            None => {
                let implicit = deictic_slot.is_some() || p.required || wanted.is_some();
                if !implicit {
                    continue;
                }
                match from_evidence(&spec.name, name, &sub_task.depends_on, ctx) {
                    Resolved::None => {
                        let slot = deictic_slot.as_deref().or_else(|| ellipsis_slot(&spec.name, name));
                        slot.and_then(|s| from_memory(s, p.value_kind, ctx.memory)).map_or(Resolved::None, Resolved::One)
                    }
                    r => r,
                }
            }
        };
        match resolved {
            Resolved::One(v) => {
                ex.args.insert(name.to_string(), v);
            }
            Resolved::Many(vs) => {
                ex.args.insert(name.to_string(), vs[0].clone());
                ex.fan = Some((name.to_string(), vs));
            }
            Resolved::None => ex.unresolved.push(name.to_string()),
        }
    }
    ex
}

fn derive(api: &str, args: &mut Args) {
    if api != "send_email" {
        return;
    }
    if let Some(ids) = args.get("forward_email_ids").and_then(Value::as_list).map(<[String]>::to_vec) {
        args.entry("subject".into()).or_insert_with(|| Value::text("Forwarded emails"));
        args.entry("body".into()).or_insert_with(|| Value::Text(format!("Forwarding emails {}.", ids.join(", "))));
    }
    if !args.contains_key("subject") {
        if let Some(body) = args.get("body").and_then(Value::as_text) {
            let s = derive_subject(body);
            args.insert("subject".into(), Value::Text(s));
        }
    }
}

fn solve_rule(sub_task: &SubTask, spec: &ToolSpec, ctx: &SolveContext) -> SolveOutcome {
    if sub_task.api_name == NO_API {
        return SolveOutcome::PassThrough { text: sub_task.text.clone() };
    }
    let mut ex = extract(sub_task, spec, ctx, None);
    derive(&spec.name, &mut ex.args);
    let mut missing: Vec<String> = spec.required().filter(|p| !ex.args.contains_key(&p.name)).map(|p| p.name.clone()).collect();
    let mut calls = match ex.fan.take() {
        Some((param, values)) => values
            .into_iter()
            .map(|v| {
                let mut args = ex.args.clone();
                args.insert(param.clone(), v);
                ToolCall { api_name: spec.name.clone(), args }
            })
            .collect(),
        None => vec![ToolCall { api_name: spec.name.clone(), args: ex.args }],
    };
    for c in &calls {
        if let Ok(report) = catalog::validate_call(spec, c) {
            for v in report.violations {
                let name = v.param().to_string();
                if !missing.contains(&name) {
                    missing.push(name);
                }
            }
        }
    }
    if !missing.is_empty() {
        return SolveOutcome::Clarify { api_name: spec.name.clone(), missing };
    }
    if calls.len() == 1 {
        SolveOutcome::Call { call: calls.remove(0) }
    } else {
        SolveOutcome::FanOut { calls }
    }
}

fn check_api(sub_task: &SubTask, spec: &ToolSpec) -> Result<()> {
    if sub_task.api_name != spec.name && sub_task.api_name != NO_API {
        return Err(Error::Usage(format!("sub-task api {} does not match spec {}", sub_task.api_name, spec.name)));
    }
    Ok(())
}

/// Solves with the reference backend.
pub fn solve(sub_task: &SubTask, spec: &ToolSpec, ctx: &SolveContext) -> Result<SolveOutcome> {
    check_api(sub_task, spec)?;
    Ok(solve_rule(sub_task, spec, ctx))
}

/// Partial call restricted to `wanted`, plus the wanted names not resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Specified {
    pub call: ToolCall,
    pub unresolved: Vec<String>,
}

pub fn solve_specified(sub_task: &SubTask, spec: &ToolSpec, ctx: &SolveContext, wanted: &[&str]) -> Result<Specified> {
    check_api(sub_task, spec)?;
    if let Some(bad) = wanted.iter().find(|w| spec.param(w).is_none()) {
        return Err(Error::Usage(format!("{} has no parameter {bad}", spec.name)));
    }
    let ex = extract(sub_task, spec, ctx, Some(wanted));
    Ok(Specified { call: ToolCall { api_name: spec.name.clone(), args: ex.args }, unresolved: ex.unresolved })
}

pub const DEFAULT_MAX_RETRIES: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "repair", rename_all = "snake_case")]
pub enum Repair {
    Retry { call: ToolCall, reason: String },
    GiveUp { reason: String },
}

/// Parameter an `unknown_<kind>_id` error points at.
fn id_param(call: &ToolCall, kind: &str) -> Option<String> {
    let spec = catalog::tool(&call.api_name)?;
    let candidates: &[&str] = match kind {
        "schedule" => &["schedule_id"],
        "email" => &["email_ids", "forward_email_ids"],
        "todo" => &["todo_ids"],
        "message" => &["message_ids", "ids"],
        "chat" => &["chat_id", "ids"],
        "file" => &["file_ids"],
        "room" => &["room_id"],
        _ => &[],
    };
    candidates.iter().find(|c| spec.param(c).is_some() && call.args.contains_key(**c)).map(|c| c.to_string())
}

/// One correction step for a failed call. `attempts` counts retries already
/// spent on this call.
pub fn repair(call: &ToolCall, error: &ToolResult, ctx: &SolveContext, attempts: usize, max_retries: usize) -> Repair {
    if attempts >= max_retries {
        return Repair::GiveUp { reason: "retry budget exhausted".into() };
    }
    let Some(code) = error.error_code() else {
        return Repair::GiveUp { reason: "result is not an error".into() };
    };
    if code == "service_unavailable" {
        return Repair::Retry { call: call.clone(), reason: "transient failure, retrying".into() };
    }
    if let Some(kind) = code.strip_prefix("unknown_").and_then(|k| k.strip_suffix("_id")) {
        let Some(param) = id_param(call, kind) else {
            return Repair::GiveUp { reason: format!("no parameter for {code}") };
        };
        let spec = catalog::tool(&call.api_name).expect("executed calls are cataloged");
        let pk = spec.param(&param).expect("id_param checks the tool schema").value_kind;
        let slot = ellipsis_slot(&call.api_name, &param).unwrap_or(param.as_str());
        if let Some(fresh) = from_memory(slot, pk, ctx.memory) {
            if call.args.get(&param) != Some(&fresh) {
                let mut fixed = call.clone();
                fixed.args.insert(param.clone(), fresh);
                return Repair::Retry { call: fixed, reason: format!("{param} replaced from memory") };
            }
        }
        return Repair::GiveUp { reason: format!("no fresher value for {param}") };
    }
    Repair::GiveUp { reason: format!("no repair rule for {code}") }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{parse_datetime, Payload};

    fn now() -> NaiveDateTime {
        parse_datetime("2024-06-04T10:00:00").unwrap()
    }

    fn ctx<'a>(m: &'a SessionMemory, ev: &'a BTreeMap<String, ToolResult>) -> SolveContext<'a> {
        SolveContext { memory: m, evidence: ev, now: now() }
    }

    fn sub(text: &str, api: &str) -> SubTask {
        SubTask::new(1, text, api)
    }

    #[test]
    fn create_meeting_clause() {
        let m = SessionMemory::default();
        let ev = BTreeMap::new();
        let st = sub("Create a meeting at 3 PM today, the topic is project discussion, invite Jiashu Xia", "create_schedule");
        let out = solve(&st, catalog::require_tool("create_schedule").unwrap(), &ctx(&m, &ev)).unwrap();
        let expected = ToolCall::new("create_schedule")
            .arg("title", Value::text("project discussion"))
            .arg("start_time", Value::text("2024-06-04T15:00:00"))
            .arg("participants", Value::list(["Jiashu Xia"]));
        assert_eq!(out, SolveOutcome::Call { call: expected });
    }

    #[test]
    fn evidence_ids_flow() {
        let m = SessionMemory::default();
        let records = crate::sim::fixture::f1().emails[..2].to_vec();
        let ev = BTreeMap::from([("#E1".to_string(), ToolResult::ok(Payload::Emails { records }))]);
        let mut st = SubTask::new(2, "Summarize the emails #E1", "summary_email");
        st.depends_on = vec!["#E1".into()];
        let out = solve(&st, catalog::require_tool("summary_email").unwrap(), &ctx(&m, &ev)).unwrap();
        let call = ToolCall::new("summary_email").arg("email_ids", Value::list(["e1", "e2"]));
        assert_eq!(out, SolveOutcome::Call { call });
    }

    #[test]
    fn none_passes_through_and_missing_clarifies() {
        let m = SessionMemory::default();
        let ev = BTreeMap::new();
        let st = sub("hello", NO_API);
        let out = solve(&st, catalog::require_tool("search_email").unwrap(), &ctx(&m, &ev)).unwrap();
        assert_eq!(out, SolveOutcome::PassThrough { text: "hello".into() });
        let st = sub("Move the start time up to 2 PM", "update_schedule");
        let out = solve(&st, catalog::require_tool("update_schedule").unwrap(), &ctx(&m, &ev)).unwrap();
        assert_eq!(out, SolveOutcome::Clarify { api_name: "update_schedule".into(), missing: vec!["schedule_id".into()] });
    }

    #[test]
    fn specified_params() {
        let mut m = SessionMemory::default();
        m.entity_slots.insert("schedule_id".into(), Value::text("s9"));
        let ev = BTreeMap::new();
        let spec = catalog::require_tool("update_schedule").unwrap();
        let st = sub("move the start time up to 2 PM", "update_schedule");
        let s = solve_specified(&st, spec, &ctx(&m, &ev), &["start_time"]).unwrap();
        assert_eq!(s.call.args, Args::from([("start_time".into(), Value::text("2024-06-04T14:00:00"))]));
        assert!(solve_specified(&st, spec, &ctx(&m, &ev), &[]).unwrap().call.args.is_empty());
        let s = solve_specified(&st, spec, &ctx(&m, &ev), &["schedule_id"]).unwrap();
        assert_eq!(s.call.args["schedule_id"], Value::text("s9"));
        assert!(solve_specified(&st, spec, &ctx(&m, &ev), &["bogus"]).is_err());
    }

    #[test]
    fn fan_out_over_found_meetings() {
        let m = SessionMemory::default();
        let recs = crate::sim::fixture::f1().schedules[..2].to_vec();
        let ev = BTreeMap::from([("#E1".to_string(), ToolResult::ok(Payload::Schedules { records: recs }))]);
        let mut st = SubTask::new(2, "Delete the schedule #E1", "delete_schedule");
        st.depends_on = vec!["#E1".into()];
        let out = solve(&st, catalog::require_tool("delete_schedule").unwrap(), &ctx(&m, &ev)).unwrap();
        assert_eq!(out.calls().len(), 2);
    }

    #[test]
    fn repair_rules() {
        let mut m = SessionMemory::default();
        m.entity_slots.insert("schedule_id".into(), Value::text("s10"));
        let ev = BTreeMap::new();
        let c = ctx(&m, &ev);
        let call = ToolCall::new("delete_schedule").arg("schedule_id", Value::text("s9"));
        let err = ToolResult::err("unknown_schedule_id", "no such schedule");
        match repair(&call, &err, &c, 0, 1) {
            Repair::Retry { call, .. } => assert_eq!(call.args["schedule_id"], Value::text("s10")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(repair(&call, &ToolResult::err("room_unavailable", "x"), &c, 0, 1), Repair::GiveUp { .. }));
        assert!(matches!(repair(&call, &err, &c, 1, 1), Repair::GiveUp { .. }));
    }

    #[test]
    fn derived_subject() {
        assert_eq!(
            derive_subject("Salaries for December have been issued, please check!"),
            "Salaries for December have been issued"
        );
    }
}
