//! Deterministic in-memory office backend implementing all 21 tools.
//!
//! Each store sits behind its own lock, so calls touching different stores
//! run concurrently and calls on the same store are linearized. The clock
//! only moves when a caller sets it. Search results come back newest first
//! with ids in natural order as the tiebreak; summaries are extractive
//! (first sentence of each record) so they are stable across runs.

pub mod fixture;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::{Mutex, MutexGuard};

use chrono::{Duration, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::error::{Error, Result};
use crate::records::*;
use crate::types::{Args, Payload, ToolCall, ToolResult, Value};

pub use fixture::{Fixture, FIXTURE_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    /// The next call fails with `service_unavailable`, later calls succeed.
    FailOnce,
    /// Every call fails with `service_unavailable` until cleared.
    FailAlways,
    /// The next call fails as if its id argument were stale.
    UnknownId,
}

pub const SERVICE_UNAVAILABLE: &str = "service_unavailable";

/// Full content of every store.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stores {
    pub emails: Vec<EmailRecord>,
    pub schedules: Vec<ScheduleRecord>,
    pub rooms: Vec<MeetingRoom>,
    pub chats: Vec<GroupChat>,
    pub messages: Vec<ChatMessage>,
    pub todos: Vec<TodoItem>,
    pub files: Vec<CloudFile>,
}

/// Serializable simulator state used for golden dumps and persistence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub fixture: String,
    pub seed: u64,
    pub owner: String,
    pub now: NaiveDateTime,
    pub next_ids: BTreeMap<String, u64>,
    pub faults: BTreeMap<String, FaultMode>,
    pub stores: Stores,
}

#[derive(Debug)]
struct Meta {
    fixture: String,
    seed: u64,
    owner: String,
    now: NaiveDateTime,
    next_ids: BTreeMap<String, u64>,
    faults: BTreeMap<String, FaultMode>,
}

#[derive(Debug)]
pub struct OfficeSim {
    meta: Mutex<Meta>,
    emails: Mutex<Vec<EmailRecord>>,
    schedules: Mutex<Vec<ScheduleRecord>>,
    rooms: Mutex<Vec<MeetingRoom>>,
    chats: Mutex<Vec<GroupChat>>,
    messages: Mutex<Vec<ChatMessage>>,
    todos: Mutex<Vec<TodoItem>>,
    files: Mutex<Vec<CloudFile>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// Compares ids like `e2` < `e10`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> (&str, Option<u64>) {
        let pos = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
        (&s[..pos], s[pos..].parse().ok())
    }
    split(a).cmp(&split(b)).then_with(|| a.cmp(b))
}

fn newest_first<T>(v: &mut [T], ts: impl Fn(&T) -> NaiveDateTime, id: impl Fn(&T) -> &str) {
    v.sort_by(|a, b| ts(b).cmp(&ts(a)).then_with(|| natural_cmp(id(a), id(b))));
}

fn contains_ci(hay: &str, needle: &str) -> bool {
    hay.to_lowercase().contains(&needle.to_lowercase())
}

fn eq_ci(a: &str, b: &str) -> bool {
    a.eq_ignore_ascii_case(b)
}

/// First sentence of a text, ending in punctuation.
pub fn first_sentence(s: &str) -> String {
    let s = s.trim();
    match s.find(['.', '!', '?']) {
        Some(i) => s[..=i].to_string(),
        None if s.is_empty() => String::new(),
        None => format!("{s}."),
    }
}

fn apply_limit<T>(mut v: Vec<T>, limit: Option<i64>) -> Vec<T> {
    if let Some(l) = limit {
        v.truncate(l.max(0) as usize);
    }
    v
}

/// Typed views of call arguments. Arguments were validated beforehand.
struct A<'a>(&'a Args);

impl A<'_> {
    fn text(&self, k: &str) -> Option<&str> {
        self.0.get(k).and_then(Value::as_text)
    }
    fn list(&self, k: &str) -> Option<&[String]> {
        self.0.get(k).and_then(Value::as_list)
    }
    fn int(&self, k: &str) -> Option<i64> {
        self.0.get(k).and_then(Value::as_int)
    }
    fn bool(&self, k: &str) -> Option<bool> {
        self.0.get(k).and_then(Value::as_bool)
    }
    fn dt(&self, k: &str) -> Option<NaiveDateTime> {
        self.0.get(k).and_then(Value::as_datetime)
    }
}

fn unknown(kind: &str, id: &str) -> ToolResult {
    ToolResult::err(format!("unknown_{kind}_id"), format!("no {kind} with id {id}"))
}

/// The record kind addressed by a tool's id parameters, used for
/// `unknown_<kind>_id` errors.
pub fn id_kind(api: &str) -> &'static str {
    match api {
        "summary_email" | "send_email" => "email",
        "update_schedule" | "delete_schedule" => "schedule",
        "create_meeting" | "find_meeting_room" => "room",
        "withdraw_chatmsg" => "message",
        "summary_chatmsg" | "send_chatmsg" | "search_chatmsg" => "chat",
        "delete_todo" => "todo",
        "summary_files" => "file",
        _ => "record",
    }
}

impl OfficeSim {
    pub fn new(fixture: &Fixture, seed: u64) -> Self {
        let sim = OfficeSim {
            meta: Mutex::new(Meta {
                fixture: String::new(),
                seed: 0,
                owner: String::new(),
                now: fixture.epoch,
                next_ids: BTreeMap::new(),
                faults: BTreeMap::new(),
            }),
            emails: Mutex::default(),
            schedules: Mutex::default(),
            rooms: Mutex::default(),
            chats: Mutex::default(),
            messages: Mutex::default(),
            todos: Mutex::default(),
            files: Mutex::default(),
        };
        sim.load(fixture, seed);
        sim
    }

    /// A simulator seeded from a named fixture.
    pub fn named(name: &str, seed: u64) -> Result<Self> {
        Ok(Self::new(&fixture::named(name)?, seed))
    }

    /// Reloads every store from a named fixture and resets the clock to its
    /// epoch. The seed is recorded in snapshots; fixture content is fixed.
    pub fn seed(&self, name: &str, seed: u64) -> Result<()> {
        self.load(&fixture::named(name)?, seed);
        Ok(())
    }

    fn load(&self, f: &Fixture, seed: u64) {
        fn next(ids: impl Iterator<Item = String>) -> u64 {
            ids.filter_map(|id| id.trim_start_matches(|c: char| c.is_ascii_alphabetic()).parse::<u64>().ok()).max().unwrap_or(0)
                + 1
        }
        let mut meta = lock(&self.meta);
        meta.fixture = f.name.clone();
        meta.seed = seed;
        meta.owner = f.owner.clone();
        meta.now = f.epoch;
        meta.faults.clear();
        meta.next_ids = BTreeMap::from([
            ("e".to_string(), next(f.emails.iter().map(|r| r.id.clone()))),
            ("s".to_string(), next(f.schedules.iter().map(|r| r.id.clone()))),
            ("m".to_string(), next(f.messages.iter().map(|r| r.id.clone()))),
            ("t".to_string(), next(f.todos.iter().map(|r| r.id.clone()))),
        ]);
        *lock(&self.emails) = f.emails.clone();
        *lock(&self.schedules) = f.schedules.clone();
        *lock(&self.rooms) = f.rooms.clone();
        *lock(&self.chats) = f.chats.clone();
        *lock(&self.messages) = f.messages.clone();
        *lock(&self.todos) = f.todos.clone();
        *lock(&self.files) = f.files.clone();
    }

    pub fn restore(&self, snap: &Snapshot) {
        let mut meta = lock(&self.meta);
        meta.fixture = snap.fixture.clone();
        meta.seed = snap.seed;
        meta.owner = snap.owner.clone();
        meta.now = snap.now;
        meta.next_ids = snap.next_ids.clone();
        meta.faults = snap.faults.clone();
        *lock(&self.emails) = snap.stores.emails.clone();
        *lock(&self.schedules) = snap.stores.schedules.clone();
        *lock(&self.rooms) = snap.stores.rooms.clone();
        *lock(&self.chats) = snap.stores.chats.clone();
        *lock(&self.messages) = snap.stores.messages.clone();
        *lock(&self.todos) = snap.stores.todos.clone();
        *lock(&self.files) = snap.stores.files.clone();
    }

    pub fn snapshot(&self) -> Snapshot {
        let meta = lock(&self.meta);
        Snapshot {
            fixture: meta.fixture.clone(),
            seed: meta.seed,
            owner: meta.owner.clone(),
            now: meta.now,
            next_ids: meta.next_ids.clone(),
            faults: meta.faults.clone(),
            stores: self.stores(),
        }
    }

    pub fn stores(&self) -> Stores {
        Stores {
            emails: lock(&self.emails).clone(),
            schedules: lock(&self.schedules).clone(),
            rooms: lock(&self.rooms).clone(),
            chats: lock(&self.chats).clone(),
            messages: lock(&self.messages).clone(),
            todos: lock(&self.todos).clone(),
            files: lock(&self.files).clone(),
        }
    }

    /// Pretty JSON dump of the full state; byte-identical for equal states.
    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).expect("snapshot serializes")
    }

    pub fn now(&self) -> NaiveDateTime {
        lock(&self.meta).now
    }

    pub fn owner(&self) -> String {
        lock(&self.meta).owner.clone()
    }

    /// Moves the clock forward; moving it backwards is a usage error.
    pub fn advance_to(&self, t: NaiveDateTime) -> Result<()> {
        let mut meta = lock(&self.meta);
        if t < meta.now {
            return Err(Error::Usage(format!("clock cannot move back from {} to {t}", meta.now)));
        }
        meta.now = t;
        Ok(())
    }

    /// Sets the clock to any value.
    pub fn reset_clock(&self, t: NaiveDateTime) {
        lock(&self.meta).now = t;
    }

    pub fn inject_fault(&self, api: &str, mode: FaultMode) -> Result<()> {
        catalog::require_tool(api)?;
        lock(&self.meta).faults.insert(api.to_string(), mode);
        Ok(())
    }

    pub fn clear_fault(&self, api: &str) {
        lock(&self.meta).faults.remove(api);
    }

    pub fn clear_faults(&self) {
        lock(&self.meta).faults.clear();
    }

    pub fn faults(&self) -> BTreeMap<String, FaultMode> {
        lock(&self.meta).faults.clone()
    }

    fn take_fault(&self, api: &str) -> Option<FaultMode> {
        let mut meta = lock(&self.meta);
        let mode = *meta.faults.get(api)?;
        if mode != FaultMode::FailAlways {
            meta.faults.remove(api);
        }
        Some(mode)
    }

    fn fresh_id(&self, prefix: &str) -> String {
        let mut meta = lock(&self.meta);
        let n = meta.next_ids.entry(prefix.to_string()).or_insert(1);
        let id = format!("{prefix}{n}");
        *n += 1;
        id
    }

    /// Executes one tool call.
    pub fn execute(&self, call: &ToolCall) -> ToolResult {
        let Some(spec) = catalog::tool(&call.api_name) else {
            return ToolResult::err("unknown_api", format!("no tool named {}", call.api_name));
        };
        match catalog::validate_call(spec, call) {
            Ok(r) if r.is_ok() => {}
            Ok(r) => return ToolResult::err("invalid_arguments", format!("{:?}", r.violations)),
            Err(e) => return ToolResult::err("invalid_arguments", e.to_string()),
        }
        match self.take_fault(&call.api_name) {
            Some(FaultMode::FailOnce | FaultMode::FailAlways) => {
                return ToolResult::err(SERVICE_UNAVAILABLE, format!("{} is temporarily unavailable", call.api_name))
            }
            Some(FaultMode::UnknownId) => {
                let kind = id_kind(&call.api_name);
                return ToolResult::err(format!("unknown_{kind}_id"), "referenced id is stale");
            }
            None => {}
        }
        let a = A(&call.args);
        match call.api_name.as_str() {
            "search_email" => self.search_email(&a),
            "send_email" => self.send_email(&a),
            "summary_email" => self.summary_email(&a),
            "create_schedule" => self.create_schedule(&a, false, None),
            "update_schedule" => self.update_schedule(&a),
            "find_schedule_status" => self.find_schedule_status(&a),
            "delete_schedule" => self.delete_schedule(&a),
            "create_meeting" => self.create_meeting(&a),
            "find_meetings" => self.find_meetings(&a),
            "find_meeting_room" => self.find_meeting_room(&a),
            "search_chatmsg" => self.search_chatmsg(&a),
            "send_chatmsg" => self.send_chatmsg(&a),
            "withdraw_chatmsg" => self.withdraw_chatmsg(&a),
            "summary_chatmsg" => self.summary_chatmsg(&a),
            "search_group_chat" => self.search_group_chat(&a),
            "find_recent_chat_list" => self.find_recent_chat_list(&a),
            "create_todo" => self.create_todo(&a),
            "find_todo" => self.find_todo(&a),
            "delete_todo" => self.delete_todo(&a),
            "search_files" => self.search_files(&a),
            "summary_files" => self.summary_files(&a),
            other => ToolResult::err("unknown_api", format!("no handler for {other}")),
        }
    }

    fn search_email(&self, a: &A) -> ToolResult {
        let mut v: Vec<EmailRecord> = lock(&self.emails)
            .iter()
            .filter(|e| a.text("sender").is_none_or(|p| eq_ci(&e.sender, p)))
            .filter(|e| a.text("recipient").is_none_or(|p| e.recipients.iter().any(|r| eq_ci(r, p))))
            .filter(|e| a.text("cc").is_none_or(|p| e.cc.iter().any(|r| eq_ci(r, p))))
            .filter(|e| a.text("subject_keywords").is_none_or(|k| contains_ci(&e.subject, k)))
            .filter(|e| a.text("body_keywords").is_none_or(|k| contains_ci(&e.body, k)))
            .filter(|e| a.text("folder").is_none_or(|f| e.folder == f))
            .filter(|e| a.bool("has_attachment").is_none_or(|b| e.has_attachment == b))
            .filter(|e| a.dt("start_time").is_none_or(|t| e.received_at >= t))
            .filter(|e| a.dt("end_time").is_none_or(|t| e.received_at <= t))
            .filter(|e| a.text("read_status").is_none_or(|s| e.read == (s == "read")))
            .cloned()
            .collect();
        newest_first(&mut v, |e| e.received_at, |e| &e.id);
        ToolResult::ok(Payload::Emails { records: apply_limit(v, a.int("limit")) })
    }

    fn send_email(&self, a: &A) -> ToolResult {
        let forward = a.list("forward_email_ids").unwrap_or_default().to_vec();
        let mut emails = lock(&self.emails);
        if let Some(id) = forward.iter().find(|id| !emails.iter().any(|e| &e.id == *id)) {
            return unknown("email", id);
        }
        let id = self.fresh_id("e");
        let meta = lock(&self.meta);
        emails.push(EmailRecord {
            id: id.clone(),
            sender: meta.owner.clone(),
            recipients: a.list("to").unwrap_or_default().to_vec(),
            cc: a.list("cc").unwrap_or_default().to_vec(),
            subject: a.text("subject").unwrap_or_default().to_string(),
            body: a.text("body").unwrap_or_default().to_string(),
            folder: "sent".into(),
            has_attachment: !forward.is_empty(),
            received_at: meta.now,
            read: true,
        });
        ToolResult::ok(Payload::Sent { email_id: id })
    }

    fn summary_email(&self, a: &A) -> ToolResult {
        let emails = lock(&self.emails);
        let ids = a.list("email_ids").unwrap_or_default();
        let mut parts = Vec::new();
        for id in ids {
            match emails.iter().find(|e| &e.id == id) {
                Some(e) => parts.push(format!("{}: {}", e.subject, first_sentence(&e.body))),
                None => return unknown("email", id),
            }
        }
        if let Some(c) = a.text("content") {
            parts.push(first_sentence(c));
        }
        if parts.is_empty() {
            return ToolResult::err("missing_input", "nothing to summarize");
        }
        let text = format!("{} {}", count_phrase(ids.len(), "email"), parts.join(" "));
        ToolResult::ok(Payload::Summary { text: text.trim().to_string(), source_ids: ids.to_vec(), chat_ids: vec![] })
    }

    fn create_schedule(&self, a: &A, meeting: bool, room: Option<&MeetingRoom>) -> ToolResult {
        let Some(start) = a.dt("start_time") else {
            return ToolResult::err("invalid_arguments", "start_time is required");
        };
        let end = a.dt("end_time").unwrap_or(start + Duration::hours(1));
        if start >= end {
            return ToolResult::err("invalid_time_range", "start_time must be before end_time");
        }
        let participants = a.list("participants").unwrap_or_default().to_vec();
        let mut schedules = lock(&self.schedules);
        if let Some(r) = room {
            if schedules.iter().any(|s| s.room_id.as_deref() == Some(&r.id) && s.start_time < end && start < s.end_time) {
                return ToolResult::err("room_unavailable", format!("room {} is booked", r.id));
            }
        }
        let record = ScheduleRecord {
            id: self.fresh_id("s"),
            title: a.text("title").unwrap_or("untitled").to_string(),
            start_time: start,
            end_time: end,
            is_meeting: meeting || !participants.is_empty(),
            participants,
            location: room.map(|r| format!("room {}", r.name)).or(a.text("location").map(str::to_string)).unwrap_or_default(),
            organizer: self.owner(),
            room_id: room.map(|r| r.id.clone()),
            reminder_minutes: None,
        };
        schedules.push(record.clone());
        ToolResult::ok(Payload::Schedules { records: vec![record] })
    }

    fn update_schedule(&self, a: &A) -> ToolResult {
        let id = a.text("schedule_id").unwrap_or_default();
        let mut schedules = lock(&self.schedules);
        let Some(pos) = schedules.iter().position(|s| s.id == id) else {
            return unknown("schedule", id);
        };
        let mut s = schedules[pos].clone();
        let duration = s.end_time - s.start_time;
        if let Some(t) = a.text("title") {
            s.title = t.to_string();
        }
        match (a.dt("start_time"), a.dt("end_time")) {
            (Some(st), Some(en)) => (s.start_time, s.end_time) = (st, en),
            (Some(st), None) => (s.start_time, s.end_time) = (st, st + duration),
            (None, Some(en)) => s.end_time = en,
            (None, None) => {}
        }
        if s.start_time >= s.end_time {
            return ToolResult::err("invalid_time_range", "start_time must be before end_time");
        }
        if let Some(p) = a.list("participants") {
            s.participants = p.to_vec();
            s.is_meeting |= !p.is_empty();
        }
        if let Some(l) = a.text("location") {
            s.location = l.to_string();
        }
        if let Some(r) = a.int("reminder_minutes") {
            s.reminder_minutes = Some(r);
        }
        if let Some(room) = &s.room_id {
            let clash = schedules.iter().any(|o| {
                o.id != s.id && o.room_id.as_ref() == Some(room) && o.start_time < s.end_time && s.start_time < o.end_time
            });
            if clash {
                return ToolResult::err("room_unavailable", format!("room {room} is booked"));
            }
        }
        schedules[pos] = s.clone();
        ToolResult::ok(Payload::Schedules { records: vec![s] })
    }

    fn find_schedule_status(&self, a: &A) -> ToolResult {
        let persons = a.list("persons").map(<[String]>::to_vec).unwrap_or_else(|| vec![self.owner()]);
        let start = a.dt("start_time").unwrap_or_else(|| self.now());
        let end = a.dt("end_time").unwrap_or_else(|| (start.date() + Duration::days(1)).and_time(NaiveTime::MIN));
        if start >= end {
            return ToolResult::err("invalid_time_range", "start_time must be before end_time");
        }
        let mut busy: Vec<ScheduleRecord> = lock(&self.schedules)
            .iter()
            .filter(|s| persons.iter().any(|p| s.involves(p)) && s.start_time < end && start < s.end_time)
            .cloned()
            .collect();
        busy.sort_by(|x, y| x.start_time.cmp(&y.start_time).then_with(|| natural_cmp(&x.id, &y.id)));
        let free = free_intervals(start, end, busy.iter().map(|s| (s.start_time, s.end_time)));
        ToolResult::ok(Payload::Availability { persons, free, busy })
    }

    fn delete_schedule(&self, a: &A) -> ToolResult {
        let id = a.text("schedule_id").unwrap_or_default();
        let mut schedules = lock(&self.schedules);
        match schedules.iter().position(|s| s.id == id) {
            Some(pos) => {
                schedules.remove(pos);
                ToolResult::ok(Payload::Deleted { ids: vec![id.to_string()] })
            }
            None => unknown("schedule", id),
        }
    }

    fn create_meeting(&self, a: &A) -> ToolResult {
        let room = match a.text("room_id") {
            Some(id) => match lock(&self.rooms).iter().find(|r| r.id == id) {
                Some(r) => Some(r.clone()),
                None => return unknown("room", id),
            },
            None => None,
        };
        self.create_schedule(a, true, room.as_ref())
    }

    fn find_meetings(&self, a: &A) -> ToolResult {
        let start = a.dt("start_time").unwrap_or_else(|| self.now().date().and_time(NaiveTime::MIN));
        let end = a.dt("end_time").unwrap_or(start + Duration::days(1));
        let mut v: Vec<ScheduleRecord> = lock(&self.schedules)
            .iter()
            .filter(|s| s.is_meeting && s.start_time >= start && s.start_time <= end)
            .cloned()
            .collect();
        newest_first(&mut v, |s| s.start_time, |s| &s.id);
        ToolResult::ok(Payload::Schedules { records: v })
    }

    fn find_meeting_room(&self, a: &A) -> ToolResult {
        let window = match (a.dt("start_time"), a.dt("end_time")) {
            (Some(s), Some(e)) => Some((s, e)),
            (Some(s), None) => Some((s, s + Duration::hours(1))),
            (None, Some(e)) => Some((e - Duration::hours(1), e)),
            (None, None) => None,
        };
        let schedules = lock(&self.schedules);
        let v: Vec<MeetingRoom> = lock(&self.rooms)
            .iter()
            .filter(|r| a.int("capacity").is_none_or(|c| r.capacity >= c))
            .filter(|r| a.list("equipment").is_none_or(|eq| eq.iter().all(|x| r.equipment.iter().any(|y| eq_ci(x, y)))))
            .filter(|r| a.text("building").is_none_or(|b| r.building == b))
            .filter(|r| {
                window.is_none_or(|(s, e)| {
                    !schedules.iter().any(|x| x.room_id.as_ref() == Some(&r.id) && x.start_time < e && s < x.end_time)
                })
            })
            .cloned()
            .collect();
        ToolResult::ok(Payload::Rooms { records: v })
    }

    fn search_chatmsg(&self, a: &A) -> ToolResult {
        let mut v: Vec<ChatMessage> = lock(&self.messages)
            .iter()
            .filter(|m| a.text("chat_id").is_none_or(|c| m.chat_id == c))
            .filter(|m| a.text("sender").is_none_or(|p| eq_ci(&m.sender, p)))
            .filter(|m| a.text("keywords").is_none_or(|k| contains_ci(&m.text, k)))
            .filter(|m| a.dt("start_time").is_none_or(|t| m.sent_at >= t))
            .filter(|m| a.dt("end_time").is_none_or(|t| m.sent_at <= t))
            .filter(|m| a.text("mentioned").is_none_or(|p| m.mentions.iter().any(|x| eq_ci(x, p))))
            .cloned()
            .collect();
        newest_first(&mut v, |m| m.sent_at, |m| &m.id);
        ToolResult::ok(Payload::Messages { records: apply_limit(v, a.int("limit")) })
    }

    fn send_chatmsg(&self, a: &A) -> ToolResult {
        let chat_id = a.text("chat_id").unwrap_or_default();
        if !lock(&self.chats).iter().any(|c| c.id == chat_id) {
            return unknown("chat", chat_id);
        }
        let id = self.fresh_id("m");
        let (owner, now) = {
            let meta = lock(&self.meta);
            (meta.owner.clone(), meta.now)
        };
        lock(&self.messages).push(ChatMessage {
            id: id.clone(),
            chat_id: chat_id.to_string(),
            sender: owner,
            text: a.text("content").unwrap_or_default().to_string(),
            sent_at: now,
            mentions: a.list("mentions").unwrap_or_default().to_vec(),
        });
        ToolResult::ok(Payload::MessageSent { message_id: id, chat_id: chat_id.to_string() })
    }

    fn withdraw_chatmsg(&self, a: &A) -> ToolResult {
        let ids = a.list("message_ids").unwrap_or_default();
        let mut messages = lock(&self.messages);
        for id in ids {
            let found = messages.iter().any(|m| &m.id == id && a.text("chat_id").is_none_or(|c| m.chat_id == c));
            if !found {
                return unknown("message", id);
            }
        }
        messages.retain(|m| !ids.contains(&m.id));
        ToolResult::ok(Payload::Deleted { ids: ids.to_vec() })
    }

    fn summary_chatmsg(&self, a: &A) -> ToolResult {
        let ids = a.list("ids").unwrap_or_default();
        let messages = lock(&self.messages);
        let chats = lock(&self.chats);
        let mut picked: Vec<&ChatMessage> = Vec::new();
        let mut chat_ids: Vec<String> = Vec::new();
        for id in ids {
            if let Some(c) = chats.iter().find(|c| &c.id == id) {
                let mut in_chat: Vec<&ChatMessage> = messages.iter().filter(|m| m.chat_id == c.id).collect();
                in_chat.sort_by(|x, y| x.sent_at.cmp(&y.sent_at).then_with(|| natural_cmp(&x.id, &y.id)));
                picked.extend(in_chat);
            } else if let Some(m) = messages.iter().find(|m| &m.id == id) {
                picked.push(m);
            } else if id.starts_with('g') {
                return unknown("chat", id);
            } else {
                return unknown("message", id);
            }
        }
        for m in &picked {
            if !chat_ids.contains(&m.chat_id) {
                chat_ids.push(m.chat_id.clone());
            }
        }
        let parts: Vec<String> = picked.iter().map(|m| format!("{}: {}", m.sender, first_sentence(&m.text))).collect();
        let text = format!("{} {}", count_phrase(picked.len(), "message"), parts.join(" "));
        ToolResult::ok(Payload::Summary { text: text.trim().to_string(), source_ids: ids.to_vec(), chat_ids })
    }

    fn search_group_chat(&self, a: &A) -> ToolResult {
        let mut v: Vec<GroupChat> =
            lock(&self.chats).iter().filter(|c| a.text("keywords").is_none_or(|k| contains_ci(&c.name, k))).cloned().collect();
        v.sort_by(|x, y| natural_cmp(&x.id, &y.id));
        ToolResult::ok(Payload::Chats { records: v })
    }

    fn find_recent_chat_list(&self, a: &A) -> ToolResult {
        let now = self.now();
        let (start, end) = match a.list("time_range").and_then(|r| Some((r.first()?, r.get(1)?))) {
            Some((s, e)) => match (crate::types::parse_datetime(s), crate::types::parse_datetime(e)) {
                (Some(s), Some(e)) => (s, e),
                _ => return ToolResult::err("invalid_arguments", "time_range needs two datetimes"),
            },
            None => (now - Duration::days(1), now),
        };
        let messages = lock(&self.messages);
        let mut latest: Vec<(NaiveDateTime, GroupChat)> = lock(&self.chats)
            .iter()
            .filter_map(|c| {
                messages
                    .iter()
                    .filter(|m| m.chat_id == c.id && m.sent_at >= start && m.sent_at <= end)
                    .map(|m| m.sent_at)
                    .max()
                    .map(|t| (t, c.clone()))
            })
            .collect();
        latest.sort_by(|x, y| y.0.cmp(&x.0).then_with(|| natural_cmp(&x.1.id, &y.1.id)));
        let v = latest.into_iter().map(|(_, c)| c).collect();
        ToolResult::ok(Payload::Chats { records: apply_limit(v, a.int("limit")) })
    }

    fn create_todo(&self, a: &A) -> ToolResult {
        let item = TodoItem {
            id: self.fresh_id("t"),
            title: a.text("title").unwrap_or_default().to_string(),
            due_time: a.dt("due_time"),
            status: "open".into(),
        };
        lock(&self.todos).push(item.clone());
        ToolResult::ok(Payload::Todos { records: vec![item] })
    }

    fn find_todo(&self, a: &A) -> ToolResult {
        let mut v: Vec<TodoItem> = lock(&self.todos)
            .iter()
            .filter(|t| a.text("keywords").is_none_or(|k| contains_ci(&t.title, k)))
            .filter(|t| a.text("status").is_none_or(|s| t.status == s))
            .filter(|t| a.dt("due_before").is_none_or(|d| t.due_time.is_some_and(|x| x <= d)))
            .cloned()
            .collect();
        v.sort_by(|x, y| y.due_time.cmp(&x.due_time).then_with(|| natural_cmp(&x.id, &y.id)));
        ToolResult::ok(Payload::Todos { records: v })
    }

    fn delete_todo(&self, a: &A) -> ToolResult {
        let ids = a.list("todo_ids").unwrap_or_default();
        let mut todos = lock(&self.todos);
        if let Some(id) = ids.iter().find(|id| !todos.iter().any(|t| &t.id == *id)) {
            return unknown("todo", id);
        }
        todos.retain(|t| !ids.contains(&t.id));
        ToolResult::ok(Payload::Deleted { ids: ids.to_vec() })
    }

    fn search_files(&self, a: &A) -> ToolResult {
        let mut v: Vec<CloudFile> = lock(&self.files)
            .iter()
            .filter(|f| a.text("name_keywords").is_none_or(|k| contains_ci(&f.name, k)))
            .filter(|f| a.text("content_keywords").is_none_or(|k| contains_ci(&f.content, k)))
            .filter(|f| a.text("owner").is_none_or(|p| eq_ci(&f.owner, p)))
            .filter(|f| a.text("file_type").is_none_or(|t| f.file_type == t))
            .filter(|f| a.text("folder").is_none_or(|d| eq_ci(&f.folder, d)))
            .filter(|f| a.dt("created_after").is_none_or(|t| f.created_at >= t))
            .filter(|f| a.dt("created_before").is_none_or(|t| f.created_at <= t))
            .filter(|f| a.dt("modified_after").is_none_or(|t| f.modified_at >= t))
            .filter(|f| a.dt("modified_before").is_none_or(|t| f.modified_at <= t))
            .filter(|f| a.text("shared_with").is_none_or(|p| f.shared_with.iter().any(|x| eq_ci(x, p))))
            .filter(|f| a.bool("starred").is_none_or(|s| f.starred == s))
            .filter(|f| a.int("min_size_kb").is_none_or(|s| f.size_kb >= s))
            .cloned()
            .collect();
        newest_first(&mut v, |f| f.modified_at, |f| &f.id);
        ToolResult::ok(Payload::Files { records: apply_limit(v, a.int("limit")) })
    }

    fn summary_files(&self, a: &A) -> ToolResult {
        let ids = a.list("file_ids").unwrap_or_default();
        let files = lock(&self.files);
        let mut parts = Vec::new();
        for id in ids {
            match files.iter().find(|f| &f.id == id) {
                Some(f) => parts.push(format!("{}: {}", f.name, first_sentence(&f.content))),
                None => return unknown("file", id),
            }
        }
        let text = format!("{} {}", count_phrase(ids.len(), "file"), parts.join(" "));
        ToolResult::ok(Payload::Summary { text, source_ids: ids.to_vec(), chat_ids: vec![] })
    }
}

fn count_phrase(n: usize, noun: &str) -> String {
    match n {
        0 => String::new(),
        1 => format!("1 {noun}."),
        n => format!("{n} {noun}s."),
    }
}

/// Complement of the union of `busy` intervals within `[start, end)`.
pub fn free_intervals(
    start: NaiveDateTime,
    end: NaiveDateTime,
    busy: impl IntoIterator<Item = (NaiveDateTime, NaiveDateTime)>,
) -> Vec<Interval> {
    let mut spans: Vec<(NaiveDateTime, NaiveDateTime)> =
        busy.into_iter().map(|(s, e)| (s.max(start), e.min(end))).filter(|(s, e)| s < e).collect();
    spans.sort();
    let mut free = Vec::new();
    let mut cursor = start;
    for (s, e) in spans {
        if s > cursor {
            free.push(Interval { start: cursor, end: s });
        }
        cursor = cursor.max(e);
    }
    if cursor < end {
        free.push(Interval { start: cursor, end });
    }
    free
}
