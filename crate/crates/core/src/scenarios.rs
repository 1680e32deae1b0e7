//! Scripted multi-turn dialogues replayed end-to-end against a fixture, with
//! expected tool sequences and simulator state checks after each turn.
//!
//! Scripts are TOML:
//!
//! ```toml
//! name = "demo"
//! fixture = "F1"
//! [[steps]]
//! query = "Create a meeting at 3 PM today, the topic is project discussion"
//! apis = ["create_schedule"]
//! [[steps.expect]]
//! kind = "schedule_at"
//! title = "project discussion"
//! start = "15:00"
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::{Orchestrator, PipelineConfig, Stage, TurnTrace};
use crate::sim::{FaultMode, OfficeSim, Stores};
use crate::types::parse_datetime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateCheck {
    /// A schedule with this title starts at `start` (`HH:MM` on the
    /// simulator's current day, or a full datetime).
    ScheduleAt {
        title: String,
        start: String,
    },
    /// No meeting starts at `start`; plain calendar entries may.
    NoMeetingAt {
        start: String,
    },
    /// A sent email to `to` whose body contains `body_contains`.
    EmailSent {
        to: String,
        body_contains: String,
    },
    ReplyContains {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStep {
    pub query: String,
    /// Expected apis of the final calls, in order, fan-out collapsed.
    pub apis: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub related: Option<bool>,
    #[serde(default)]
    pub expect: Vec<StateCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default = "default_fixture")]
    pub fixture: String,
    pub steps: Vec<ScenarioStep>,
}

fn default_fixture() -> String {
    "F1".to_string()
}

pub const BUILTIN_SCRIPTS: [&str; 2] = ["email_followup", "schedule_followup"];

const EMAIL_FOLLOWUP: &str = r#"
name = "email_followup"
fixture = "F1"

[[steps]]
query = "Search for the emails I received today"
apis = ["search_email"]
related = false
expect = [{ kind = "reply_contains", text = "Found 3 email(s)" }]

[[steps]]
query = "Summarize the emails I received today"
apis = ["summary_email"]
related = true
expect = [{ kind = "reply_contains", text = "Summary:" }]

[[steps]]
query = "Forward the emails received today to Jiashu Xia"
apis = ["send_email"]
related = true
expect = [{ kind = "email_sent", to = "Jiashu Xia", body_contains = "e3" }]

[[steps]]
query = "Send an email to Jiashu Xia, content: Salaries for December have been issued, please check!"
apis = ["send_email"]
related = false
expect = [{ kind = "email_sent", to = "Jiashu Xia", body_contains = "Salaries for December have been issued" }]
"#;

const SCHEDULE_FOLLOWUP: &str = r#"
name = "schedule_followup"
fixture = "F1"

[[steps]]
query = "Create a meeting at 3 PM today, the topic is project discussion, invite Jiashu Xia"
apis = ["create_schedule"]
related = false
expect = [{ kind = "schedule_at", title = "project discussion", start = "15:00" }]

[[steps]]
query = "Move the start time up to 2 PM"
apis = ["update_schedule"]
related = true
expect = [{ kind = "schedule_at", title = "project discussion", start = "14:00" }]

[[steps]]
query = "Update the meeting at 3 PM today, change the topic to product discussion"
apis = ["find_meetings", "update_schedule"]
related = false
expect = [{ kind = "schedule_at", title = "product discussion", start = "15:00" }]

[[steps]]
query = "Delete all meetings at 3 PM today"
apis = ["find_meetings", "delete_schedule"]
related = false
expect = [{ kind = "no_meeting_at", start = "15:00" }]

[[steps]]
query = "Check Jiashu Xia's free time tomorrow?"
apis = ["find_schedule_status"]
related = false
expect = [{ kind = "reply_contains", text = "free slot(s)" }]
"#;

impl ScenarioScript {
    pub fn parse(text: &str) -> Result<Self> {
        let s: ScenarioScript = toml::from_str(text).map_err(|e| {
            let loc = e.span().map_or("script".to_string(), |r| format!("byte {}", r.start));
            Error::parse(loc, e.message())
        })?;
        if s.steps.is_empty() {
            return Err(Error::Usage(format!("scenario {} has no steps", s.name)));
        }
        Ok(s)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "email_followup" => Self::parse(EMAIL_FOLLOWUP),
            "schedule_followup" => Self::parse(SCHEDULE_FOLLOWUP),
            _ => Err(Error::Usage(format!("no built-in scenario {name:?} (known: {})", BUILTIN_SCRIPTS.join(", ")))),
        }
    }

    /// Every api some step expects, first use first.
    pub fn apis(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for a in self.steps.iter().flat_map(|s| &s.apis) {
            if !out.contains(a) {
                out.push(a.clone());
            }
        }
        out
    }
}

/// Fault injected just before the first step that expects `api`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub api: String,
    pub mode: FaultMode,
}

/// Record ids added, removed or modified in one turn, per store.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StoreDiff {
    pub added: BTreeMap<String, Vec<String>>,
    pub removed: BTreeMap<String, Vec<String>>,
    pub changed: BTreeMap<String, Vec<String>>,
}

impl StoreDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.changed.is_empty()
    }
}

fn by_id(stores: &Stores) -> BTreeMap<String, BTreeMap<String, serde_json::Value>> {
    let v = serde_json::to_value(stores).expect("stores serialize");
    let mut out = BTreeMap::new();
    for (store, records) in v.as_object().expect("stores is an object") {
        let map = records
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|r| Some((r.get("id")?.as_str()?.to_string(), r.clone())))
            .collect();
        out.insert(store.clone(), map);
    }
    out
}

pub fn diff_stores(before: &Stores, after: &Stores) -> StoreDiff {
    let (b, a) = (by_id(before), by_id(after));
    let mut d = StoreDiff::default();
    for (store, after_map) in &a {
        let empty = BTreeMap::new();
        let before_map = b.get(store).unwrap_or(&empty);
        let push = |m: &mut BTreeMap<String, Vec<String>>, id: &String| {
            m.entry(store.clone()).or_default().push(id.clone());
        };
        for (id, rec) in after_map {
            match before_map.get(id) {
                None => push(&mut d.added, id),
                Some(old) if old != rec => push(&mut d.changed, id),
                _ => {}
            }
        }
        for id in before_map.keys().filter(|id| !after_map.contains_key(*id)) {
            push(&mut d.removed, id);
        }
    }
    d
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub query: String,
    pub passed: bool,
    pub failures: Vec<String>,
    pub diff: StoreDiff,
    pub traces: Vec<TurnTrace>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultPlan>,
    pub steps: Vec<StepReport>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.steps.iter().all(|s| s.passed)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let fault = self.fault.as_ref().map_or(String::new(), |f| format!(" [{:?} on {}]", f.mode, f.api));
        out.push_str(&format!("scenario {}{fault}: {}\n", self.name, if self.passed() { "PASS" } else { "FAIL" }));
        for s in &self.steps {
            out.push_str(&format!("  {} {}\n", if s.passed { "ok  " } else { "FAIL" }, s.query));
            for f in &s.failures {
                out.push_str(&format!("       {f}\n"));
            }
        }
        out
    }
}

fn resolve_time(s: &str, now: NaiveDateTime) -> Option<NaiveDateTime> {
    parse_datetime(s).or_else(|| NaiveTime::parse_from_str(s, "%H:%M").ok().map(|t| now.date().and_time(t)))
}

fn check_state(check: &StateCheck, sim: &OfficeSim, trace: &TurnTrace) -> Option<String> {
    let stores = sim.stores();
    let now = sim.now();
    match check {
        StateCheck::ScheduleAt { title, start } => {
            let at = resolve_time(start, now)?;
            let ok = stores.schedules.iter().any(|s| s.title == *title && s.start_time == at);
            (!ok).then(|| format!("no schedule {title:?} starting at {at}"))
        }
        StateCheck::NoMeetingAt { start } => {
            let at = resolve_time(start, now)?;
            let left: Vec<&str> =
                stores.schedules.iter().filter(|s| s.is_meeting && s.start_time == at).map(|s| s.id.as_str()).collect();
            (!left.is_empty()).then(|| format!("meetings still start at {at}: {}", left.join(", ")))
        }
        StateCheck::EmailSent { to, body_contains } => {
            let ok = stores
                .emails
                .iter()
                .any(|e| e.folder == "sent" && e.recipients.contains(to) && e.body.contains(body_contains.as_str()));
            (!ok).then(|| format!("no sent email to {to} containing {body_contains:?}"))
        }
        StateCheck::ReplyContains { text } => {
            (!trace.turn.reply.contains(text.as_str())).then(|| format!("reply lacks {text:?}: {:?}", trace.turn.reply))
        }
    }
}

fn final_apis(trace: &TurnTrace) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut last: Option<usize> = None;
    for c in trace.turn.final_calls() {
        if last != Some(c.sub_task) {
            out.push(c.call.api_name.clone());
            last = Some(c.sub_task);
        }
    }
    out
}

fn check_step(step: &ScenarioStep, sim: &OfficeSim, trace: &TurnTrace) -> Vec<String> {
    let mut failures = Vec::new();
    if let Some(e) = &trace.turn.error {
        failures.push(format!("turn error: {e}"));
    }
    if !trace.turn.clarification.is_empty() {
        failures.push(format!("asked for {}", trace.turn.clarification.join(", ")));
    }
    let got = final_apis(trace);
    if got != step.apis {
        failures.push(format!("apis {got:?}, expected {:?}", step.apis));
    }
    if trace.turn.calls.iter().any(|c| !c.result.is_ok() && c.attempt > 0) {
        failures.push("a repaired call failed again".into());
    }
    if let Some(r) = step.related {
        if trace.turn.related != r {
            failures.push(format!("related {}, expected {r}", trace.turn.related));
        }
    }
    failures.extend(step.expect.iter().filter_map(|c| check_state(c, sim, trace)));
    failures
}

/// Replays a script on a fresh simulator with reference backends.
///
/// With a fail-once fault the affected turn must succeed through a repair.
/// With a fail-always fault it must end in an error reply; the fault is then
/// cleared and the same query re-sent in the same session, which must pass.
pub fn run_script(script: &ScenarioScript, fault: Option<&FaultPlan>) -> Result<ScenarioReport> {
    let sim = Arc::new(OfficeSim::named(&script.fixture, 0)?);
    let orch = Orchestrator::reference(sim.clone(), PipelineConfig::default());
    let session = orch.create_session();
    let fault_step = fault.map(|f| {
        script
            .steps
            .iter()
            .position(|s| s.apis.contains(&f.api))
            .ok_or_else(|| Error::Usage(format!("no step of {} calls {}", script.name, f.api)))
    });
    let fault_step = fault_step.transpose()?;
    let mut steps = Vec::new();
    for (i, step) in script.steps.iter().enumerate() {
        let before = sim.stores();
        let mut traces = Vec::new();
        let mut failures = Vec::new();
        let injected = fault.filter(|_| fault_step == Some(i));
        if let Some(f) = injected {
            sim.inject_fault(&f.api, f.mode)?;
        }
        let trace = orch.handle_message(&session, &step.query)?;
        match injected.map(|f| f.mode) {
            Some(FaultMode::FailAlways) => {
                if trace.turn.error.is_none() {
                    failures.push("expected an error reply under a persistent fault".into());
                }
                if !trace.turn.reply.starts_with("Sorry") && !trace.turn.reply.contains("\nSorry") {
                    failures.push(format!("reply is not an apology: {:?}", trace.turn.reply));
                }
                traces.push(trace);
                sim.clear_faults();
                let retry = orch.handle_message(&session, &step.query)?;
                failures.extend(check_step(step, &sim, &retry));
                traces.push(retry);
            }
            Some(_) => {
                failures.extend(check_step(step, &sim, &trace));
                if !trace.stages.iter().any(|s| s.stage == Stage::Repair) {
                    failures.push("no repair stage recorded".into());
                }
                traces.push(trace);
            }
            None => {
                failures.extend(check_step(step, &sim, &trace));
                traces.push(trace);
            }
        }
        if let Some(t) = traces.iter().find(|t| !t.stage_order_ok()) {
            failures.push(format!("stage order {:?}", t.stages.iter().map(|s| s.stage).collect::<Vec<_>>()));
        }
        let diff = diff_stores(&before, &sim.stores());
        steps.push(StepReport { query: step.query.clone(), passed: failures.is_empty(), failures, diff, traces });
    }
    Ok(ScenarioReport { name: script.name.clone(), fault: fault.cloned(), steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        for name in BUILTIN_SCRIPTS {
            let s = ScenarioScript::builtin(name).unwrap();
            assert_eq!(s.name, name);
        }
        assert!(ScenarioScript::builtin("nope").is_err());
        assert!(ScenarioScript::parse("name = 3").is_err());
    }

    #[test]
    fn diff_tracks_changes() {
        let sim = OfficeSim::named("F1", 0).unwrap();
        let before = sim.stores();
        let mut after = before.clone();
        after.schedules[0].title = "x".into();
        let removed = after.todos.remove(0);
        let d = diff_stores(&before, &after);
        assert_eq!(d.changed["schedules"], vec![before.schedules[0].id.clone()]);
        assert_eq!(d.removed["todos"], vec![removed.id]);
        assert!(d.added.is_empty());
    }
}
