//! Argument sampling for generated calls.
//!
//! Search-like tools are anchored on one store record: every filter value
//! is read off that record, so the call is guaranteed to match it. Other
//! tools draw from the stores or from small text banks. Datetimes are
//! minute-aligned so their rendered form parses back exactly.

use chrono::{Duration, NaiveDateTime, NaiveTime, Timelike};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::sim::Stores;
use crate::types::{Args, Value};

pub const TITLES: [&str; 12] = [
    "project discussion",
    "product discussion",
    "budget planning",
    "design sync",
    "quarterly kickoff",
    "hiring debrief",
    "roadmap walkthrough",
    "customer demo prep",
    "release go no go",
    "onboarding session",
    "vendor call",
    "team lunch",
];

pub const LOCATIONS: [&str; 6] = ["room everest", "cafe corner", "online", "lab two", "main hall", "desk"];

pub const SUBJECTS: [&str; 8] = [
    "weekly update",
    "salary notice",
    "meeting notes",
    "travel plan",
    "contract draft",
    "quick question",
    "status report",
    "launch recap",
];

pub const BODIES: [&str; 8] = [
    "Salaries for December have been issued, please check!",
    "Please find the notes from today attached.",
    "Can you review the draft before Friday?",
    "The launch went well. Thanks everyone for the effort.",
    "I will be out of office tomorrow.",
    "Please confirm your travel dates.",
    "The contract is ready for signature.",
    "Let me know if the numbers look right.",
];

pub const CHAT_TEXTS: [&str; 6] = [
    "the build is green",
    "please review my changes",
    "standup moves to 11 today",
    "the demo went well",
    "who can cover the support rota",
    "slides are in the shared folder",
];

pub const TODO_TITLES: [&str; 6] = [
    "call the vendor",
    "file the travel claim",
    "draft the newsletter",
    "order team badges",
    "renew the domain",
    "clean up the backlog",
];

pub const SUMMARY_NOTES: [&str; 4] =
    ["Focus on action items.", "Keep it under three sentences.", "Highlight anything urgent.", "List the decisions made."];

const STOPWORDS: [&str; 16] =
    ["the", "and", "for", "with", "that", "this", "from", "your", "are", "was", "have", "will", "please", "next", "new", "our"];

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> Option<&'a T> {
    items.choose(rng)
}

fn pick_str(rng: &mut ChaCha8Rng, items: &[&str]) -> String {
    items.choose(rng).expect("non-empty bank").to_string()
}

/// A content word of `text` usable as a search keyword.
fn keyword(rng: &mut ChaCha8Rng, text: &str) -> Option<String> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_ascii_alphabetic())
        .filter(|w| w.len() >= 4 && !STOPWORDS.contains(&w.to_lowercase().as_str()))
        .map(str::to_lowercase)
        .collect();
    pick(rng, &words).cloned()
}

fn some_people(rng: &mut ChaCha8Rng, people: &[String], owner: &str, max: usize) -> Vec<String> {
    let mut others: Vec<String> = people.iter().filter(|p| *p != owner).cloned().collect();
    others.shuffle(rng);
    let n = rng.random_range(1..=max.min(others.len()).max(1));
    others.truncate(n);
    others
}

fn some_ids(rng: &mut ChaCha8Rng, ids: Vec<String>, max: usize) -> Vec<String> {
    let mut ids = ids;
    ids.shuffle(rng);
    let n = rng.random_range(1..=max.min(ids.len()).max(1));
    ids.truncate(n);
    ids
}

fn floor_hour(t: NaiveDateTime) -> NaiveDateTime {
    t.date().and_hms_opt(t.hour(), 0, 0).expect("valid hour")
}

/// A bound at or before `t`, on the hour.
fn before(rng: &mut ChaCha8Rng, t: NaiveDateTime) -> NaiveDateTime {
    floor_hour(t) - Duration::hours(rng.random_range(0..=3))
}

/// A bound at or after `t`, on the hour.
fn after(rng: &mut ChaCha8Rng, t: NaiveDateTime) -> NaiveDateTime {
    let up = if t == floor_hour(t) { t } else { floor_hour(t) + Duration::hours(1) };
    up + Duration::hours(rng.random_range(0..=3))
}

fn after_tight(t: NaiveDateTime) -> NaiveDateTime {
    if t == floor_hour(t) {
        t
    } else {
        floor_hour(t) + Duration::hours(1)
    }
}

/// A working-hours slot between `lo` and `hi` days from today.
fn slot(rng: &mut ChaCha8Rng, now: NaiveDateTime, lo: i64, hi: i64) -> NaiveDateTime {
    let day = now.date() + Duration::days(rng.random_range(lo..=hi));
    let minute = if rng.random_bool(0.25) { 30 } else { 0 };
    day.and_time(NaiveTime::from_hms_opt(rng.random_range(8..=17), minute, 0).expect("valid time"))
}

fn dt(t: NaiveDateTime) -> Value {
    Value::datetime(t)
}

fn text(s: impl Into<String>) -> Value {
    Value::Text(s.into())
}

struct Draw<'a> {
    rng: &'a mut ChaCha8Rng,
    stores: &'a Stores,
    people: &'a [String],
    owner: &'a str,
    now: NaiveDateTime,
    params: &'a [&'a str],
    args: Args,
}

impl Draw<'_> {
    fn wants(&self, p: &str) -> bool {
        self.params.contains(&p)
    }

    fn set(&mut self, p: &str, v: Value) {
        if self.wants(p) {
            self.args.insert(p.to_string(), v);
        }
    }
}

/// Literal values for `params` of `api`. `None` when the stores hold no
/// record that can anchor this parameter combination.
pub fn sample_args(
    api: &str,
    params: &[&str],
    rng: &mut ChaCha8Rng,
    stores: &Stores,
    people: &[String],
    owner: &str,
    now: NaiveDateTime,
) -> Option<Args> {
    let mut d = Draw { rng, stores, people, owner, now, params, args: Args::new() };
    match api {
        "search_email" => search_email(&mut d)?,
        "send_email" => send_email(&mut d),
        "summary_email" => {
            let ids = some_ids(d.rng, d.stores.emails.iter().map(|e| e.id.clone()).collect(), 3);
            d.set("email_ids", Value::List(ids));
            let note = pick_str(d.rng, &SUMMARY_NOTES);
            d.set("content", text(note));
        }
        "create_schedule" | "create_meeting" => create_entry(&mut d, api == "create_meeting"),
        "update_schedule" => update_schedule(&mut d)?,
        "find_schedule_status" => find_schedule_status(&mut d)?,
        "delete_schedule" => {
            let s = pick(d.rng, &d.stores.schedules)?;
            d.set("schedule_id", text(&s.id));
        }
        "find_meetings" => {
            let meetings: Vec<_> = d.stores.schedules.iter().filter(|s| s.is_meeting).collect();
            let m = *pick(d.rng, &meetings)?;
            let (lo, hi) = (before(d.rng, m.start_time), after(d.rng, m.start_time));
            d.set("start_time", dt(lo));
            // Without a start the window opens at midnight today.
            if !d.wants("start_time") && m.start_time < now.date().and_time(NaiveTime::MIN) {
                return None;
            }
            d.set("end_time", dt(hi));
        }
        "find_meeting_room" => find_meeting_room(&mut d)?,
        "search_chatmsg" => search_chatmsg(&mut d)?,
        "send_chatmsg" => {
            let c = pick(d.rng, &d.stores.chats)?;
            d.set("chat_id", text(&c.id));
            let t = pick_str(d.rng, &CHAT_TEXTS);
            d.set("content", text(t));
            let members: Vec<String> = c.members.clone();
            let m = some_people(d.rng, &members, owner, 2);
            d.set("mentions", Value::List(m));
        }
        "withdraw_chatmsg" => {
            let c = pick(d.rng, &d.stores.chats)?;
            let ids: Vec<String> = d.stores.messages.iter().filter(|m| m.chat_id == c.id).map(|m| m.id.clone()).collect();
            if ids.is_empty() {
                return None;
            }
            let ids = some_ids(d.rng, ids, 2);
            d.set("message_ids", Value::List(ids));
            d.set("chat_id", text(&c.id));
        }
        "summary_chatmsg" => {
            let ids = if d.rng.random_bool(0.5) {
                some_ids(d.rng, d.stores.chats.iter().map(|c| c.id.clone()).collect(), 2)
            } else {
                some_ids(d.rng, d.stores.messages.iter().map(|m| m.id.clone()).collect(), 3)
            };
            d.set("ids", Value::List(ids));
        }
        "search_group_chat" => {
            let c = pick(d.rng, &d.stores.chats)?;
            let k = keyword(d.rng, &c.name)?;
            d.set("keywords", text(k));
        }
        "find_recent_chat_list" => {
            let m = pick(d.rng, &d.stores.messages)?;
            let (lo, hi) = (before(d.rng, m.sent_at), after(d.rng, m.sent_at));
            d.set("time_range", Value::List(vec![crate::types::fmt_datetime(lo), crate::types::fmt_datetime(hi)]));
            let n = d.rng.random_range(1..=3);
            d.set("limit", Value::Int(n));
        }
        "create_todo" => {
            let t = pick_str(d.rng, &TODO_TITLES);
            d.set("title", text(t));
            let due = slot(d.rng, now, 0, 6);
            d.set("due_time", dt(due));
        }
        "find_todo" => {
            let with_due: Vec<_> = d.stores.todos.iter().filter(|t| t.due_time.is_some()).collect();
            let t = *pick(d.rng, &with_due)?;
            if d.wants("keywords") {
                let k = keyword(d.rng, &t.title)?;
                d.set("keywords", text(k));
            }
            d.set("status", text(&t.status));
            let due = after(d.rng, t.due_time?);
            d.set("due_before", dt(due));
        }
        "delete_todo" => {
            let ids = some_ids(d.rng, d.stores.todos.iter().map(|t| t.id.clone()).collect(), 2);
            d.set("todo_ids", Value::List(ids));
        }
        "search_files" => search_files(&mut d)?,
        "summary_files" => {
            let ids = some_ids(d.rng, d.stores.files.iter().map(|f| f.id.clone()).collect(), 2);
            d.set("file_ids", Value::List(ids));
        }
        _ => return None,
    }
    Some(d.args)
}

fn search_email(d: &mut Draw) -> Option<()> {
    let candidates: Vec<_> = d.stores.emails.iter().filter(|e| !d.wants("cc") || !e.cc.is_empty()).collect();
    let e = *pick(d.rng, &candidates)?;
    d.set("sender", text(&e.sender));
    let r = pick(d.rng, &e.recipients)?.clone();
    d.set("recipient", text(r));
    if let Some(c) = pick(d.rng, &e.cc).cloned() {
        d.set("cc", text(c));
    }
    if d.wants("subject_keywords") {
        let k = keyword(d.rng, &e.subject)?;
        d.set("subject_keywords", text(k));
    }
    if d.wants("body_keywords") {
        let k = keyword(d.rng, &e.body)?;
        d.set("body_keywords", text(k));
    }
    d.set("folder", text(&e.folder));
    d.set("has_attachment", Value::Bool(e.has_attachment));
    let (lo, hi) = (before(d.rng, e.received_at), after(d.rng, e.received_at));
    d.set("start_time", dt(lo));
    d.set("end_time", dt(hi));
    d.set("read_status", text(if e.read { "read" } else { "unread" }));
    let n = d.rng.random_range(1..=5);
    d.set("limit", Value::Int(n));
    Some(())
}

fn send_email(d: &mut Draw) {
    let to = some_people(d.rng, d.people, d.owner, 2);
    d.set("to", Value::List(to));
    let s = pick_str(d.rng, &SUBJECTS);
    d.set("subject", text(s));
    let b = pick_str(d.rng, &BODIES);
    d.set("body", text(b));
    let cc = some_people(d.rng, d.people, d.owner, 1);
    d.set("cc", Value::List(cc));
    let ids = some_ids(d.rng, d.stores.emails.iter().map(|e| e.id.clone()).collect(), 2);
    d.set("forward_email_ids", Value::List(ids));
}

fn create_entry(d: &mut Draw, meeting: bool) {
    let t = pick_str(d.rng, &TITLES);
    d.set("title", text(t));
    let start = slot(d.rng, d.now, 0, 6);
    d.set("start_time", dt(start));
    let len = *[30, 60, 90].choose(d.rng).expect("non-empty");
    d.set("end_time", dt(start + Duration::minutes(len)));
    let p = some_people(d.rng, d.people, d.owner, 2);
    d.set("participants", Value::List(p));
    if meeting {
        if let Some(r) = pick(d.rng, &d.stores.rooms) {
            d.set("room_id", text(&r.id));
        }
    } else {
        let l = pick_str(d.rng, &LOCATIONS);
        d.set("location", text(l));
    }
}

fn update_schedule(d: &mut Draw) -> Option<()> {
    let s = pick(d.rng, &d.stores.schedules)?.clone();
    d.set("schedule_id", text(&s.id));
    fill_update(d);
    fix_update_end(&mut d.args, s.start_time, d.rng);
    Some(())
}

/// A new end alone must still follow the entry's start.
pub fn fix_update_end(args: &mut Args, start: NaiveDateTime, rng: &mut ChaCha8Rng) {
    if args.contains_key("end_time") && !args.contains_key("start_time") {
        args.insert("end_time".into(), end_after(start, rng));
    }
}

/// An end 30, 60 or 90 minutes after `start`.
pub fn end_after(start: NaiveDateTime, rng: &mut ChaCha8Rng) -> Value {
    let len = *[30, 60, 90].choose(rng).expect("non-empty");
    dt(start + Duration::minutes(len))
}

fn fill_update(d: &mut Draw) {
    let t = pick_str(d.rng, &TITLES);
    d.set("title", text(t));
    let start = slot(d.rng, d.now, 0, 6);
    d.set("start_time", dt(start));
    let len = *[30, 60, 90].choose(d.rng).expect("non-empty");
    d.set("end_time", dt(start + Duration::minutes(len)));
    let p = some_people(d.rng, d.people, d.owner, 2);
    d.set("participants", Value::List(p));
    let l = pick_str(d.rng, &LOCATIONS);
    d.set("location", text(l));
    let r = *[5, 10, 15, 30].choose(d.rng).expect("non-empty");
    d.set("reminder_minutes", Value::Int(r));
}

fn find_schedule_status(d: &mut Draw) -> Option<()> {
    let s = pick(d.rng, &d.stores.schedules)?;
    let involved: Vec<String> = std::iter::once(s.organizer.clone()).chain(s.participants.iter().cloned()).collect();
    if d.wants("persons") {
        let p = pick(d.rng, &involved)?.clone();
        d.set("persons", Value::List(vec![p]));
    } else if !s.involves(d.owner) {
        return None;
    }
    let lo = before(d.rng, s.start_time);
    d.set("start_time", dt(lo));
    // Defaults: from now until the next midnight.
    let from = if d.wants("start_time") { lo } else { d.now };
    let hi = after(d.rng, s.end_time).max(from + Duration::hours(1));
    d.set("end_time", dt(hi));
    if !d.wants("end_time") {
        let default_end = (from.date() + Duration::days(1)).and_time(NaiveTime::MIN);
        if s.start_time >= default_end {
            return None;
        }
    }
    if s.end_time <= from {
        return None;
    }
    Some(())
}

fn find_meeting_room(d: &mut Draw) -> Option<()> {
    let r = pick(d.rng, &d.stores.rooms)?;
    let start = slot(d.rng, d.now, 0, 6);
    d.set("start_time", dt(start));
    d.set("end_time", dt(start + Duration::hours(1)));
    let cap = d.rng.random_range(2..=r.capacity.max(2));
    d.set("capacity", Value::Int(cap.min(r.capacity)));
    let eq = some_ids(d.rng, r.equipment.clone(), 2);
    if d.wants("equipment") && r.equipment.is_empty() {
        return None;
    }
    d.set("equipment", Value::List(eq));
    d.set("building", text(&r.building));
    Some(())
}

fn search_chatmsg(d: &mut Draw) -> Option<()> {
    let candidates: Vec<_> = d.stores.messages.iter().filter(|m| !d.wants("mentioned") || !m.mentions.is_empty()).collect();
    // With only time bounds to go on, half the draws anchor on the earliest
    // or latest message and hug it, so the search can land in a single chat.
    let time_only = !["chat_id", "sender", "keywords", "mentioned"].iter().any(|p| d.wants(p));
    let hug = time_only && d.rng.random_bool(0.5);
    let m = if hug && !d.wants("start_time") {
        *candidates.iter().min_by_key(|m| m.sent_at)?
    } else if hug && !d.wants("end_time") {
        *candidates.iter().max_by_key(|m| m.sent_at)?
    } else {
        *pick(d.rng, &candidates)?
    };
    d.set("chat_id", text(&m.chat_id));
    d.set("sender", text(&m.sender));
    if d.wants("keywords") {
        let k = keyword(d.rng, &m.text)?;
        d.set("keywords", text(k));
    }
    let (lo, hi) = if hug { (m.sent_at, after_tight(m.sent_at)) } else { (before(d.rng, m.sent_at), after(d.rng, m.sent_at)) };
    d.set("start_time", dt(lo));
    d.set("end_time", dt(hi));
    if let Some(p) = pick(d.rng, &m.mentions).cloned() {
        d.set("mentioned", text(p));
    }
    let n = d.rng.random_range(1..=5);
    d.set("limit", Value::Int(n));
    Some(())
}

fn search_files(d: &mut Draw) -> Option<()> {
    let candidates: Vec<_> = d.stores.files.iter().filter(|f| !d.wants("shared_with") || !f.shared_with.is_empty()).collect();
    let f = *pick(d.rng, &candidates)?;
    if d.wants("name_keywords") {
        let k = keyword(d.rng, &f.name)?;
        d.set("name_keywords", text(k));
    }
    if d.wants("content_keywords") {
        let k = keyword(d.rng, &f.content)?;
        d.set("content_keywords", text(k));
    }
    d.set("owner", text(&f.owner));
    d.set("file_type", text(&f.file_type));
    d.set("folder", text(&f.folder));
    let (lo, hi) = (before(d.rng, f.created_at), after(d.rng, f.created_at));
    d.set("created_after", dt(lo));
    d.set("created_before", dt(hi));
    let (lo, hi) = (before(d.rng, f.modified_at), after(d.rng, f.modified_at));
    d.set("modified_after", dt(lo));
    d.set("modified_before", dt(hi));
    if let Some(p) = pick(d.rng, &f.shared_with).cloned() {
        d.set("shared_with", text(p));
    }
    d.set("starred", Value::Bool(f.starred));
    let kb = (f.size_kb / 2).max(1);
    d.set("min_size_kb", Value::Int(kb));
    let n = d.rng.random_range(1..=5);
    d.set("limit", Value::Int(n));
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::sim::OfficeSim;
    use crate::types::{Payload, ToolCall};
    use rand::SeedableRng;

    #[test]
    fn anchored_searches_hit() {
        let sim = OfficeSim::named("F1", 0).unwrap();
        let stores = sim.stores();
        let people = crate::sim::fixture::f1().people.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for api in ["search_email", "search_chatmsg", "search_files", "find_todo", "find_meetings"] {
            let spec = catalog::tool(api).unwrap();
            let all: Vec<&str> = spec.params.iter().map(|p| p.name.as_str()).collect();
            for _ in 0..20 {
                let Some(args) = sample_args(api, &all, &mut rng, &stores, &people, "Alex Sun", sim.now()) else {
                    continue;
                };
                let r = sim.execute(&ToolCall { api_name: api.into(), args });
                assert!(r.is_ok(), "{api}: {r:?}");
                assert!(!r.payload.as_ref().is_none_or(Payload::is_empty), "{api} found nothing");
            }
        }
    }
}
