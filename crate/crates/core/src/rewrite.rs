//! Context-relatedness, query rewriting and intent distribution.
//!
//! The rule backend reads queries with the shared utterance grammar.
//! A query is related to the session when it
//!
//! * opens with a continuation cue ("Also, ..."),
//! * uses a deictic form whose parameter no earlier clause of the same
//!   query can supply ("Summarize those emails"),
//! * omits a required reference that memory holds ("Move the start time up
//!   to 2 PM" has no schedule), or
//! * describes the same email set as the latest search ("Summarize the
//!   emails I received today" right after searching today's emails).
//!
//! Related clauses are re-rendered canonically with the remembered values
//! spelled out; a referent memory cannot supply becomes `<?param>`.

use std::sync::OnceLock;

use chrono::NaiveDateTime;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::grammar::{self, RawArgs, RawValue};
use crate::timeexpr;
use crate::types::{Payload, SessionMemory, ToolCall, Value, WorkerLabel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteOutput {
    pub related: bool,
    pub rewritten: String,
    pub intent: WorkerLabel,
}

/// A relatedness + rewrite + intent backend.
pub trait RewriteBackend: Send + Sync {
    fn name(&self) -> &str;
    fn rewrite(&self, memory: &SessionMemory, query: &str) -> RewriteOutput;

    /// Like `rewrite`, plus notes for the turn trace (fallbacks, retries).
    fn rewrite_noted(&self, memory: &SessionMemory, query: &str) -> (RewriteOutput, Vec<String>) {
        (self.rewrite(memory, query), Vec::new())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleRewriter;

impl RewriteBackend for RuleRewriter {
    fn name(&self) -> &str {
        "reference"
    }

    fn rewrite(&self, memory: &SessionMemory, query: &str) -> RewriteOutput {
        rewrite(memory, query)
    }
}

/// Continuation cues that mark a query as following on from the last turn.
const CUES: [&str; 3] = ["also, ", "and also, ", "additionally, "];

/// Memory slot holding the value of a required reference the user left out.
pub fn ellipsis_slot(api: &str, param: &str) -> Option<&'static str> {
    match (api, param) {
        ("update_schedule" | "delete_schedule", "schedule_id") => Some("schedule_id"),
        ("delete_todo", "todo_ids") => Some("todo_ids"),
        ("withdraw_chatmsg", "message_ids") => Some("message_ids"),
        ("summary_chatmsg", "ids") => Some("message_ids"),
        ("summary_files", "file_ids") => Some("file_ids"),
        ("send_chatmsg", "chat_id") => Some("chat_id"),
        _ => None,
    }
}

pub fn relate(memory: &SessionMemory, query: &str) -> bool {
    rewrite(memory, query).related
}

pub fn rewrite(memory: &SessionMemory, query: &str) -> RewriteOutput {
    let identity = |q: &str| RewriteOutput { related: false, rewritten: q.to_string(), intent: distribute_intent(q) };
    let Some(now) = memory.last_timestamp().filter(|_| !memory.is_empty()) else {
        return identity(query);
    };
    let trimmed = query.trim();
    let lower = trimmed.to_lowercase();
    let (cued, text) = match CUES.iter().find(|c| lower.starts_with(*c)) {
        Some(c) => (true, capitalize(&trimmed[c.len()..])),
        None => (false, trimmed.to_string()),
    };
    let clauses = grammar::split_clauses(&text);
    let mut changed = false;
    let mut out = Vec::with_capacity(clauses.len());
    let mut earlier: Vec<String> = Vec::new();
    for clause in &clauses {
        if let Some(r) = same_search_rewrite(memory, clause, now) {
            changed = true;
            out.push(r);
            earlier.push("summary_email".into());
            continue;
        }
        let Some(parsed) = grammar::parse_clause(clause) else {
            out.push(clause.clone());
            continue;
        };
        let fillable_here = |param: &str| earlier.iter().any(|prev| grammar::can_fill(&parsed.api, param, prev));
        let mut args = parsed.args.clone();
        let mut filled = false;
        for (param, slot) in &parsed.context {
            if fillable_here(param) {
                continue;
            }
            args.insert(param.clone(), slot_raw(memory, slot, param, now));
            filled = true;
        }
        let spec = catalog::tool(&parsed.api).expect("grammar tools are cataloged");
        for p in spec.required() {
            if args.contains_key(&p.name) || parsed.context_slot(&p.name).is_some() || fillable_here(&p.name) {
                continue;
            }
            if let Some(slot) = ellipsis_slot(&parsed.api, &p.name) {
                args.insert(p.name.clone(), slot_raw(memory, slot, &p.name, now));
                filled = true;
            }
        }
        earlier.push(parsed.api.clone());
        if !filled {
            out.push(clause.clone());
            continue;
        }
        changed = true;
        let mut text = grammar::render_clause(&parsed.api, &args);
        for u in &parsed.unmatched {
            text.push_str(", ");
            text.push_str(u);
        }
        out.push(text);
    }
    if !changed && !cued {
        return identity(query);
    }
    let rewritten = out.join(" and then ");
    RewriteOutput { related: true, intent: distribute_intent(&rewritten), rewritten }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Raw value for `param` from memory `slot`, or a placeholder.
fn slot_raw(memory: &SessionMemory, slot: &str, param: &str, now: NaiveDateTime) -> RawValue {
    if slot == "schedule_id" {
        if let Some(r) = remembered_schedule_ref(memory, now) {
            return RawValue::Text(r);
        }
    }
    match memory.slot(slot) {
        Some(Value::Text(t)) if slot == "free_start" => match crate::types::parse_datetime(t) {
            Some(dt) => RawValue::Text(timeexpr::render_datetime(dt, now)),
            None => RawValue::Placeholder(param.to_string()),
        },
        Some(Value::Text(t)) => RawValue::Text(t.clone()),
        Some(Value::List(l)) if !l.is_empty() => RawValue::List(l.clone()),
        _ => RawValue::Placeholder(param.to_string()),
    }
}

/// The remembered schedule described as users refer to it.
pub fn remembered_schedule_ref(memory: &SessionMemory, now: NaiveDateTime) -> Option<String> {
    let title = memory.slot_text("schedule_title")?;
    let start = memory.slot("schedule_start")?.as_datetime()?;
    let is_meeting = memory.slot("schedule_is_meeting").and_then(Value::as_bool).unwrap_or(false);
    memory.slot_text("schedule_id")?;
    Some(grammar::schedule_ref(title, start, is_meeting, now))
}

fn email_desc_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?i:(summarize|forward) (?:the |my )?emails) (.+?)(?: (?i:to) ([A-Z][A-Za-z'\-]*(?: [A-Z][A-Za-z'\-]*){0,3}(?: and [A-Z][A-Za-z'\-]*(?: [A-Z][A-Za-z'\-]*){0,3})*))?$")
            .unwrap()
    })
}

/// Parses `desc` as a search description, e.g. "I received today".
pub fn search_description(desc: &str) -> Option<RawArgs> {
    let parsed = grammar::parse_clause(&format!("Search for the emails {desc}"))?;
    (parsed.api == "search_email" && parsed.unmatched.is_empty() && !parsed.args.is_empty()).then_some(parsed.args)
}

/// "Summarize the emails <desc>" / "Forward the emails <desc> to <people>"
/// where `desc` is a search description: (verb, desc, recipients).
pub fn email_description(clause: &str) -> Option<(String, String, Option<String>)> {
    let c = email_desc_re().captures(clause.trim())?;
    let verb = c[1].to_lowercase();
    let to = c.get(3).map(|m| m.as_str().to_string());
    if verb == "forward" && to.is_none() {
        return None;
    }
    let desc = c.get(2)?.as_str().to_string();
    search_description(&desc)?;
    Some((verb, desc, to))
}

/// "Summarize/Forward the emails <desc>" where `desc` selects exactly what
/// the latest email search selected.
fn same_search_rewrite(memory: &SessionMemory, clause: &str, now: NaiveDateTime) -> Option<String> {
    let (verb, desc, to) = email_description(clause)?;
    let args = search_description(&desc)?;
    let (call, ids) = latest_search(memory)?;
    let typed = crate::solver::typed_args("search_email", &args, now)?;
    if typed != call.args {
        return None;
    }
    let mut out = RawArgs::new();
    if verb == "summarize" {
        out.insert("email_ids".into(), RawValue::List(ids));
        Some(grammar::render_clause("summary_email", &out))
    } else {
        Some(format!("Forward the emails {} to {}", ids.join(" and "), to?))
    }
}

/// The most recent successful email search in the window and its ids.
fn latest_search(memory: &SessionMemory) -> Option<(ToolCall, Vec<String>)> {
    for turn in memory.turn_window.iter().rev() {
        for c in turn.final_calls().into_iter().rev() {
            if c.call.api_name == "search_email" {
                if let Some(p @ Payload::Emails { .. }) = &c.result.payload {
                    let ids = p.ids();
                    return (!ids.is_empty()).then(|| (c.call.clone(), ids));
                }
                return None;
            }
        }
    }
    None
}

const BUSINESS_WORDS: [&str; 22] = [
    "email",
    "mail",
    "inbox",
    "schedule",
    "calendar",
    "meeting",
    "appointment",
    "free time",
    "todo",
    "to-do",
    "chat",
    "message",
    "group",
    "file",
    "document",
    "room",
    "agenda",
    "reminder",
    "forward",
    "reschedule",
    "summarize",
    "withdraw",
];
const IMAGE_WORDS: [&str; 7] = ["draw", "paint", "sketch", "picture of", "image of", "illustration", "generate an image"];
const SEARCH_WORDS: [&str; 10] =
    ["weather", "news", "stock", "price of", "who is", "who was", "what is", "what's", "search the web", "look up online"];

/// Routes a (rewritten) query to a worker.
pub fn distribute_intent(text: &str) -> WorkerLabel {
    if grammar::split_clauses(text).iter().any(|c| grammar::recognizes(c)) {
        return WorkerLabel::Wps365;
    }
    let lower = text.to_lowercase();
    let has = |words: &[&str]| words.iter().any(|w| lower.contains(w));
    if has(&BUSINESS_WORDS) {
        WorkerLabel::Wps365
    } else if has(&IMAGE_WORDS) {
        WorkerLabel::TextToImage
    } else if has(&SEARCH_WORDS) {
        WorkerLabel::OnlineSearch
    } else {
        WorkerLabel::Chitchat
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::update_memory;
    use crate::records::ScheduleRecord;
    use crate::types::{parse_datetime, CallRecord, DialogueTurn, ToolResult};

    fn now() -> NaiveDateTime {
        parse_datetime("2024-06-04T10:00:00").unwrap()
    }

    fn memory_with(call: ToolCall, result: ToolResult) -> SessionMemory {
        let turn = DialogueTurn {
            user_query: "q".into(),
            related: false,
            rewritten_query: "q".into(),
            intent: WorkerLabel::Wps365,
            plan: None,
            calls: vec![CallRecord { sub_task: 1, branch: 0, attempt: 0, call, result }],
            reply: String::new(),
            timestamp: now(),
            clarification: vec![],
            error: None,
        };
        update_memory(&SessionMemory::default(), &turn)
    }

    fn meeting_memory() -> SessionMemory {
        let rec = ScheduleRecord {
            id: "s9".into(),
            title: "project discussion".into(),
            start_time: parse_datetime("2024-06-04T15:00:00").unwrap(),
            end_time: parse_datetime("2024-06-04T16:00:00").unwrap(),
            participants: vec!["Jiashu Xia".into()],
            location: String::new(),
            organizer: "Alex Sun".into(),
            is_meeting: true,
            room_id: None,
            reminder_minutes: None,
        };
        memory_with(
            ToolCall::new("create_schedule").arg("start_time", Value::text("2024-06-04T15:00:00")),
            ToolResult::ok(Payload::Schedules { records: vec![rec] }),
        )
    }

    fn email_memory() -> SessionMemory {
        let call = ToolCall::new("search_email")
            .arg("start_time", Value::text("2024-06-04T00:00:00"))
            .arg("end_time", Value::text("2024-06-04T10:00:00"));
        let records = crate::sim::fixture::f1().emails.iter().filter(|e| ["e3", "e2", "e1"].contains(&e.id.as_str()));
        let mut records: Vec<_> = records.cloned().collect();
        records.reverse();
        memory_with(call, ToolResult::ok(Payload::Emails { records }))
    }

    #[test]
    fn empty_memory_is_identity() {
        let out = rewrite(&SessionMemory::default(), "Move the start time up to 2 PM");
        assert!(!out.related);
        assert_eq!(out.rewritten, "Move the start time up to 2 PM");
    }

    #[test]
    fn ellipsis_follow_up() {
        let out = rewrite(&meeting_memory(), "Move the start time up to 2 PM");
        assert!(out.related);
        assert_eq!(out.rewritten, "Update the 3 PM project discussion meeting today: change start time to 2 PM");
        assert_eq!(out.intent, WorkerLabel::Wps365);
    }

    #[test]
    fn self_contained_send_is_unrelated() {
        let q = "Send an email to Jiashu Xia, content: Salaries for December have been issued, please check!";
        let out = rewrite(&email_memory(), q);
        assert!(!out.related);
        assert_eq!(out.rewritten, q);
    }

    #[test]
    fn same_description_resolves_to_found_ids() {
        let out = rewrite(&email_memory(), "Summarize the emails I received today");
        assert!(out.related);
        assert_eq!(out.rewritten, "Summarize the emails e3 and e2 and e1");
        let out = rewrite(&email_memory(), "Forward the emails received today to Jiashu Xia");
        assert_eq!(out.rewritten, "Forward the emails e3 and e2 and e1 to Jiashu Xia");
        let out = rewrite(&email_memory(), "Summarize the emails I received yesterday");
        assert!(!out.related);
    }

    #[test]
    fn unresolved_referent_gets_placeholder() {
        let out = rewrite(&email_memory(), "Delete that schedule");
        assert!(out.related);
        assert_eq!(out.rewritten, "Delete the <?schedule_id>");
    }

    #[test]
    fn intra_query_dependency_is_not_context() {
        let q = "Search for the emails from Wei Zhang and then summarize those emails";
        let out = rewrite(&email_memory(), q);
        assert!(!out.related);
    }

    #[test]
    fn idempotent_on_examples() {
        for m in [meeting_memory(), email_memory()] {
            for q in ["Move the start time up to 2 PM", "Summarize those emails", "Delete it", "hello there"] {
                let once = rewrite(&m, q).rewritten;
                assert_eq!(rewrite(&m, &once).rewritten, once, "{q}");
            }
        }
    }

    #[test]
    fn intents() {
        assert_eq!(distribute_intent("Search for the emails I received today"), WorkerLabel::Wps365);
        assert_eq!(distribute_intent("draw a cat"), WorkerLabel::TextToImage);
        assert_eq!(distribute_intent("what's the weather in Beijing"), WorkerLabel::OnlineSearch);
        assert_eq!(distribute_intent("hello there"), WorkerLabel::Chitchat);
    }
}
