//! The master node: rewrite, route to a worker, run the worker, update
//! memory and record the turn trace.
//!
//! Only the wps365 worker is a complex agent (retrieve, plan, then solve and
//! execute each sub-task with one repair attempt per failed call). The other
//! workers return canned replies.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::catalog;
use crate::error::{Error, Result};
use crate::memory::update_memory;
use crate::planner::{self, PlannerBackend, RulePlanner};
use crate::retrieval::{Embedder, HashingEmbedder, ToolIndex, DEFAULT_K};
use crate::rewrite::{RewriteBackend, RuleRewriter};
use crate::sim::{OfficeSim, Snapshot};
use crate::solver::{self, Repair, RuleSolver, SolveContext, SolveOutcome, SolverBackend};
use crate::types::{
    CallRecord, DialogueTurn, Payload, Plan, Session, SessionMemory, ToolCall, ToolResult, WorkerLabel, DEFAULT_WINDOW, NO_API,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Rewrite,
    Route,
    Retrieve,
    Plan,
    Solve,
    Execute,
    Repair,
    Reply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: Stage,
    pub elapsed_us: u64,
    pub detail: serde_json::Value,
}

/// One completed turn as the service and the eval harness see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub session_id: String,
    pub turn_index: usize,
    pub turn: DialogueTurn,
    pub stages: Vec<StageTrace>,
    pub candidates: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl TurnTrace {
    /// The trace with every stage timing zeroed, for comparisons.
    pub fn without_timings(&self) -> TurnTrace {
        let mut t = self.clone();
        for s in &mut t.stages {
            s.elapsed_us = 0;
        }
        t
    }

    /// Stages follow rewrite, route, (retrieve, plan, (solve, execute,
    /// repair)*)?, reply.
    pub fn stage_order_ok(&self) -> bool {
        let names: Vec<Stage> = self.stages.iter().map(|s| s.stage).collect();
        let mut i = 0;
        let expect = |st: Stage, names: &[Stage], i: &mut usize| {
            if names.get(*i) == Some(&st) {
                *i += 1;
                true
            } else {
                false
            }
        };
        if !expect(Stage::Rewrite, &names, &mut i) || !expect(Stage::Route, &names, &mut i) {
            return false;
        }
        if expect(Stage::Retrieve, &names, &mut i) && !expect(Stage::Plan, &names, &mut i) {
            return false;
        }
        while matches!(names.get(i), Some(Stage::Solve | Stage::Execute | Stage::Repair)) {
            i += 1;
        }
        expect(Stage::Reply, &names, &mut i) && i == names.len()
    }
}

fn timed<T>(stages: &mut Vec<StageTrace>, stage: Stage, f: impl FnOnce() -> (T, serde_json::Value)) -> T {
    let start = Instant::now();
    let (out, detail) = f();
    stages.push(StageTrace { stage, elapsed_us: start.elapsed().as_micros() as u64, detail });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerKind {
    Simple,
    Complex,
}

pub struct WorkerRequest<'a> {
    pub rewritten: &'a str,
    pub memory: &'a SessionMemory,
    pub sim: &'a OfficeSim,
    pub max_retries: usize,
}

#[derive(Debug, Clone, Default)]
pub struct WorkerResponse {
    pub plan: Option<Plan>,
    pub calls: Vec<CallRecord>,
    pub reply: String,
    pub clarification: Vec<String>,
    pub error: Option<String>,
    pub candidates: Vec<String>,
    pub stages: Vec<StageTrace>,
    pub notes: Vec<String>,
}

pub trait Worker: Send + Sync {
    fn handle(&self, req: &WorkerRequest) -> WorkerResponse;
}

#[derive(Clone)]
pub struct WorkerRegistration {
    pub label: WorkerLabel,
    pub kind: WorkerKind,
    pub handler: Arc<dyn Worker>,
}

/// Canned-response worker.
#[derive(Debug, Clone, Copy)]
pub struct StubWorker {
    pub label: WorkerLabel,
}

impl Worker for StubWorker {
    fn handle(&self, req: &WorkerRequest) -> WorkerResponse {
        let reply = match self.label {
            WorkerLabel::Chitchat => "Hello! I can search, send and summarize email, manage your calendar and meetings, \
                 chats, todos and cloud documents."
                .to_string(),
            WorkerLabel::TextToImage => format!("Image generation is not available here. Request noted: {}", req.rewritten),
            WorkerLabel::OnlineSearch => format!("Web search is not available here. Request noted: {}", req.rewritten),
            WorkerLabel::Wps365 => "The office assistant is not available.".to_string(),
        };
        WorkerResponse { reply, ..Default::default() }
    }
}

/// The office assistant: retrieval, Planner and Solver over the simulator.
pub struct Wps365Agent {
    pub planner: Arc<dyn PlannerBackend>,
    pub solver: Arc<dyn SolverBackend>,
    pub embedder: Arc<dyn Embedder>,
    pub index: ToolIndex,
    pub k: usize,
}

impl Wps365Agent {
    pub fn reference(k: usize) -> Self {
        Wps365Agent {
            planner: Arc::new(RulePlanner),
            solver: Arc::new(RuleSolver),
            embedder: Arc::new(HashingEmbedder::default()),
            index: ToolIndex::reference(),
            k,
        }
    }
}

/// Merges results of a fanned-out sub-task into one piece of evidence.
fn merge_results(results: &[ToolResult]) -> Option<ToolResult> {
    let ok: Vec<&ToolResult> = results.iter().filter(|r| r.is_ok()).collect();
    let last = ok.last()?;
    if ok.len() == 1 {
        return Some((*last).clone());
    }
    let mut deleted = Vec::new();
    let mut schedules = Vec::new();
    for r in &ok {
        match &r.payload {
            Some(Payload::Deleted { ids }) => deleted.extend(ids.iter().cloned()),
            Some(Payload::Schedules { records }) => schedules.extend(records.iter().cloned()),
            _ => return Some((*last).clone()),
        }
    }
    if !deleted.is_empty() && schedules.is_empty() {
        Some(ToolResult::ok(Payload::Deleted { ids: deleted }))
    } else if deleted.is_empty() {
        Some(ToolResult::ok(Payload::Schedules { records: schedules }))
    } else {
        Some((*last).clone())
    }
}

impl Worker for Wps365Agent {
    fn handle(&self, req: &WorkerRequest) -> WorkerResponse {
        let mut resp = WorkerResponse::default();
        let candidates = timed(&mut resp.stages, Stage::Retrieve, || {
            match self.index.candidates(self.embedder.as_ref(), req.rewritten, self.k) {
                Ok(c) => {
                    let d = json!({ "k": self.k, "candidates": c });
                    (c, d)
                }
                Err(e) => (Vec::new(), json!({ "error": e.to_string() })),
            }
        });
        resp.candidates = candidates.clone();
        let (plan, notes) = timed(&mut resp.stages, Stage::Plan, || {
            let (plan, notes) = self.planner.plan_noted(req.rewritten, &candidates, req.memory);
            let d = json!({ "backend": self.planner.name(), "text": planner::plan_text_format(&plan) });
            ((plan, notes), d)
        });
        resp.notes.extend(notes);
        let mut evidence: BTreeMap<String, ToolResult> = BTreeMap::new();
        let mut lines: Vec<String> = Vec::new();
        'tasks: for st in &plan.sub_tasks {
            let now = req.sim.now();
            let ctx = SolveContext { memory: req.memory, evidence: &evidence, now };
            let outcome = if st.api_name == NO_API {
                SolveOutcome::PassThrough { text: st.text.clone() }
            } else {
                let spec = catalog::require_tool(&st.api_name).expect("planned apis are cataloged");
                let (o, notes) = timed(&mut resp.stages, Stage::Solve, || {
                    let (o, n) = self.solver.solve_noted(st, spec, &ctx);
                    let d = json!({ "sub_task": st.evidence_id, "backend": self.solver.name(), "outcome": o });
                    ((o, n), d)
                });
                resp.notes.extend(notes);
                o
            };
            let calls: Vec<ToolCall> = match outcome {
                SolveOutcome::PassThrough { text } => {
                    lines.push(format!("I could not match \"{text}\" to an office tool."));
                    continue;
                }
                SolveOutcome::Clarify { api_name, missing } => {
                    lines.push(format!("To run {api_name} I need: {}.", missing.join(", ")));
                    resp.clarification = missing;
                    break 'tasks;
                }
                SolveOutcome::Call { call } => vec![call],
                SolveOutcome::FanOut { calls } => calls,
            };
            let mut results = Vec::new();
            for (branch, first) in calls.into_iter().enumerate() {
                let mut call = first;
                let mut attempt = 0;
                loop {
                    let result = timed(&mut resp.stages, Stage::Execute, || {
                        let r = req.sim.execute(&call);
                        let d = json!({ "sub_task": st.evidence_id, "branch": branch, "attempt": attempt,
                                        "call": call, "result": r });
                        (r, d)
                    });
                    resp.calls.push(CallRecord {
                        sub_task: st.index,
                        branch,
                        attempt,
                        call: call.clone(),
                        result: result.clone(),
                    });
                    if result.is_ok() {
                        lines.push(describe(&call, &result));
                        results.push(result);
                        break;
                    }
                    let ctx = SolveContext { memory: req.memory, evidence: &evidence, now: req.sim.now() };
                    let repair = timed(&mut resp.stages, Stage::Repair, || {
                        let r = solver::repair(&call, &result, &ctx, attempt, req.max_retries);
                        let d = json!({ "sub_task": st.evidence_id, "branch": branch, "repair": r });
                        (r, d)
                    });
                    match repair {
                        Repair::Retry { call: fixed, .. } => {
                            call = fixed;
                            attempt += 1;
                        }
                        Repair::GiveUp { reason } => {
                            let err = result.error.as_ref().map_or("unknown error".to_string(), |e| e.message.clone());
                            let msg = format!("{} failed: {err} ({reason})", call.api_name);
                            lines.push(format!("Sorry, {msg}."));
                            resp.error = Some(msg);
                            break 'tasks;
                        }
                    }
                }
            }
            if let Some(merged) = merge_results(&results) {
                evidence.insert(st.evidence_id.clone(), merged);
            }
        }
        resp.plan = Some(plan);
        resp.reply = lines.join("\n");
        resp
    }
}

/// Plain-language summary of a successful call.
pub fn describe(call: &ToolCall, result: &ToolResult) -> String {
    let Some(p) = &result.payload else { return format!("{} returned nothing.", call.api_name) };
    let list = |items: Vec<String>| if items.is_empty() { String::new() } else { format!(": {}", items.join("; ")) };
    match p {
        Payload::Emails { records } => format!(
            "Found {} email(s){}.",
            records.len(),
            list(records.iter().map(|e| format!("{} \"{}\" from {}", e.id, e.subject, e.sender)).collect())
        ),
        Payload::Schedules { records } => {
            let verb = match call.api_name.as_str() {
                "create_schedule" | "create_meeting" => "Created",
                "update_schedule" => "Updated",
                _ => "Found",
            };
            format!(
                "{verb} {} schedule(s){}.",
                records.len(),
                list(records.iter().map(|s| format!("{} \"{}\" at {}", s.id, s.title, s.start_time)).collect())
            )
        }
        Payload::Availability { persons, free, busy } => format!(
            "{} free slot(s) and {} busy entr{} for {}{}.",
            free.len(),
            busy.len(),
            if busy.len() == 1 { "y" } else { "ies" },
            persons.join(", "),
            list(free.iter().map(|f| format!("{} to {}", f.start, f.end)).collect())
        ),
        Payload::Rooms { records } => {
            format!("Found {} room(s){}.", records.len(), list(records.iter().map(|r| r.name.clone()).collect()))
        }
        Payload::Messages { records } => format!("Found {} chat message(s).", records.len()),
        Payload::Chats { records } => {
            format!("Found {} chat(s){}.", records.len(), list(records.iter().map(|c| c.name.clone()).collect()))
        }
        Payload::Todos { records } => {
            let verb = if call.api_name == "create_todo" { "Created" } else { "Found" };
            format!("{verb} {} todo(s){}.", records.len(), list(records.iter().map(|t| t.title.clone()).collect()))
        }
        Payload::Files { records } => {
            format!("Found {} file(s){}.", records.len(), list(records.iter().map(|f| f.name.clone()).collect()))
        }
        Payload::Summary { text, .. } => format!("Summary: {text}"),
        Payload::Sent { email_id } => format!("Email sent ({email_id})."),
        Payload::MessageSent { message_id, chat_id } => format!("Message {message_id} sent to {chat_id}."),
        Payload::Deleted { ids } => format!("Deleted {}.", ids.join(", ")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k: usize,
    pub window: usize,
    pub max_retries: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { k: DEFAULT_K, window: DEFAULT_WINDOW, max_retries: solver::DEFAULT_MAX_RETRIES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session: Session,
    pub traces: Vec<TurnTrace>,
}

/// Everything needed to resume a service after restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistedState {
    pub next_session: u64,
    pub sessions: Vec<SessionState>,
    pub sim: Snapshot,
}

pub struct Orchestrator {
    rewriter: Arc<dyn RewriteBackend>,
    workers: RwLock<BTreeMap<WorkerLabel, WorkerRegistration>>,
    sim: Arc<OfficeSim>,
    config: PipelineConfig,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<SessionState>>>>,
    next_session: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Orchestrator {
    /// An orchestrator with the given rewriter and office agent; the simple
    /// workers are registered separately.
    pub fn new(sim: Arc<OfficeSim>, rewriter: Arc<dyn RewriteBackend>, wps365: Arc<dyn Worker>, config: PipelineConfig) -> Self {
        let reg = WorkerRegistration { label: WorkerLabel::Wps365, kind: WorkerKind::Complex, handler: wps365 };
        Orchestrator {
            rewriter,
            workers: RwLock::new(BTreeMap::from([(WorkerLabel::Wps365, reg)])),
            sim,
            config,
            sessions: Mutex::new(BTreeMap::new()),
            next_session: AtomicU64::new(1),
        }
    }

    /// All four workers on reference backends.
    pub fn reference(sim: Arc<OfficeSim>, config: PipelineConfig) -> Self {
        let o = Orchestrator::new(sim, Arc::new(RuleRewriter), Arc::new(Wps365Agent::reference(config.k)), config);
        o.register_stubs();
        o
    }

    pub fn register_stubs(&self) {
        for label in [WorkerLabel::Chitchat, WorkerLabel::TextToImage, WorkerLabel::OnlineSearch] {
            let reg = WorkerRegistration { label, kind: WorkerKind::Simple, handler: Arc::new(StubWorker { label }) };
            // Ignore labels the caller already registered.
            let _ = self.register_worker(reg);
        }
    }

    pub fn register_worker(&self, reg: WorkerRegistration) -> Result<()> {
        let mut w = self.workers.write().unwrap_or_else(|p| p.into_inner());
        if w.contains_key(&reg.label) {
            return Err(Error::Usage(format!("worker {} is already registered", reg.label.as_str())));
        }
        w.insert(reg.label, reg);
        Ok(())
    }

    pub fn sim(&self) -> &Arc<OfficeSim> {
        &self.sim
    }

    pub fn config(&self) -> PipelineConfig {
        self.config
    }

    pub fn create_session(&self) -> String {
        let id = format!("sess-{}", self.next_session.fetch_add(1, Ordering::SeqCst));
        let state = SessionState { session: Session::new(&id, self.config.window), traces: vec![] };
        lock(&self.sessions).insert(id.clone(), Arc::new(Mutex::new(state)));
        id
    }

    fn state(&self, id: &str) -> Result<Arc<Mutex<SessionState>>> {
        lock(&self.sessions).get(id).cloned().ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        lock(&self.sessions).keys().cloned().collect()
    }

    /// Runs one turn in a stored session; turns of one session are
    /// serialized.
    pub fn handle_message(&self, session_id: &str, text: &str) -> Result<TurnTrace> {
        let state = self.state(session_id)?;
        let mut st = lock(&state);
        let trace = self.handle_turn(&mut st.session, text)?;
        st.traces.push(trace.clone());
        Ok(trace)
    }

    pub fn trace(&self, session_id: &str) -> Result<Vec<TurnTrace>> {
        let state = self.state(session_id)?;
        let traces = lock(&state).traces.clone();
        Ok(traces)
    }

    pub fn session(&self, session_id: &str) -> Result<Session> {
        let state = self.state(session_id)?;
        let session = lock(&state).session.clone();
        Ok(session)
    }

    /// Runs one turn on a caller-owned session: exactly one turn is
    /// appended, error paths included.
    pub fn handle_turn(&self, session: &mut Session, text: &str) -> Result<TurnTrace> {
        if text.trim().is_empty() {
            return Err(Error::Usage("message text is empty".into()));
        }
        let timestamp = self.sim.now();
        let mut stages = Vec::new();
        let mut notes = Vec::new();
        let memory = &session.memory;
        let out = timed(&mut stages, Stage::Rewrite, || {
            let (out, n) = self.rewriter.rewrite_noted(memory, text);
            let d = json!({ "backend": self.rewriter.name(), "output": out });
            ((out, n), d)
        });
        let (rw, n) = out;
        notes.extend(n);
        let reg = timed(&mut stages, Stage::Route, || {
            let w = self.workers.read().unwrap_or_else(|p| p.into_inner());
            let reg = w.get(&rw.intent).cloned();
            let d = json!({ "label": rw.intent, "registered": reg.is_some(),
                            "kind": reg.as_ref().map(|r| r.kind) });
            (reg, d)
        });
        let resp = match reg {
            Some(reg) => reg.handler.handle(&WorkerRequest {
                rewritten: &rw.rewritten,
                memory,
                sim: &self.sim,
                max_retries: self.config.max_retries,
            }),
            None => WorkerResponse {
                reply: format!("No worker is registered for {}.", rw.intent.as_str()),
                error: Some(format!("unregistered worker {}", rw.intent.as_str())),
                ..Default::default()
            },
        };
        stages.extend(resp.stages);
        notes.extend(resp.notes);
        let reply = if resp.reply.is_empty() { "Done.".to_string() } else { resp.reply };
        stages.push(StageTrace { stage: Stage::Reply, elapsed_us: 0, detail: json!({ "text": reply }) });
        let turn = DialogueTurn {
            user_query: text.to_string(),
            related: rw.related,
            rewritten_query: rw.rewritten,
            intent: rw.intent,
            plan: resp.plan,
            calls: resp.calls,
            reply,
            timestamp,
            clarification: resp.clarification,
            error: resp.error,
        };
        session.memory = update_memory(&session.memory, &turn);
        session.turns.push(turn.clone());
        Ok(TurnTrace {
            session_id: session.id.clone(),
            turn_index: session.turns.len() - 1,
            turn,
            stages,
            candidates: resp.candidates,
            notes,
        })
    }

    pub fn persist(&self) -> PersistedState {
        let sessions = lock(&self.sessions).values().map(|s| lock(s).clone()).collect();
        PersistedState { next_session: self.next_session.load(Ordering::SeqCst), sessions, sim: self.sim.snapshot() }
    }

    pub fn restore(&self, state: &PersistedState) {
        self.sim.restore(&state.sim);
        let mut map = lock(&self.sessions);
        map.clear();
        for s in &state.sessions {
            map.insert(s.session.id.clone(), Arc::new(Mutex::new(s.clone())));
        }
        self.next_session.store(state.next_session, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orch() -> Orchestrator {
        Orchestrator::reference(Arc::new(OfficeSim::named("F1", 0).unwrap()), PipelineConfig::default())
    }

    #[test]
    fn search_turn() {
        let o = orch();
        let id = o.create_session();
        let t = o.handle_message(&id, "Search for the emails I received today").unwrap();
        assert_eq!(t.turn.intent, WorkerLabel::Wps365);
        assert_eq!(t.turn.calls.len(), 1);
        assert_eq!(t.turn.calls[0].call.api_name, "search_email");
        assert!(t.turn.calls[0].result.is_ok());
        assert!(t.stage_order_ok(), "{:?}", t.stages.iter().map(|s| s.stage).collect::<Vec<_>>());
    }

    #[test]
    fn chitchat_turn() {
        let o = orch();
        let id = o.create_session();
        let t = o.handle_message(&id, "hello there").unwrap();
        assert_eq!(t.turn.intent, WorkerLabel::Chitchat);
        assert!(t.turn.calls.is_empty());
        assert!(t.stage_order_ok());
    }

    #[test]
    fn follow_up_moves_meeting() {
        let o = orch();
        let id = o.create_session();
        o.handle_message(&id, "Create a meeting at 3 PM today, the topic is project discussion, invite Jiashu Xia").unwrap();
        let t = o.handle_message(&id, "Move the start time up to 2 PM").unwrap();
        assert!(t.turn.related);
        let c = &t.turn.calls[0].call;
        assert_eq!(c.api_name, "update_schedule");
        let sid = c.args["schedule_id"].as_text().unwrap();
        let s = o.sim().stores().schedules.into_iter().find(|s| s.id == sid).unwrap();
        assert_eq!(s.start_time.format("%H:%M").to_string(), "14:00");
    }

    #[test]
    fn duplicate_worker_rejected() {
        let o = orch();
        let reg = WorkerRegistration {
            label: WorkerLabel::Wps365,
            kind: WorkerKind::Complex,
            handler: Arc::new(StubWorker { label: WorkerLabel::Wps365 }),
        };
        assert!(o.register_worker(reg).is_err());
    }

    #[test]
    fn unknown_session() {
        assert!(matches!(orch().trace("nope"), Err(Error::UnknownSession(_))));
    }
}
