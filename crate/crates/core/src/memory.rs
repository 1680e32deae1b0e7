//! Session memory: entity slots extracted from tool results, the last call,
//! and a bounded window of recent turns.
//!
//! Slots by payload kind:
//!
//! | payload        | slots                                                        |
//! |----------------|--------------------------------------------------------------|
//! | emails         | `email_ids`                                                  |
//! | summary        | `summary`, `chat_id` when the summary covered chats          |
//! | schedules      | `schedule_id`, `schedule_title`, `schedule_start`, `schedule_is_meeting` (first record) |
//! | availability   | `free_start`, `persons`, schedule slots of the first busy entry |
//! | todos          | `todo_ids`                                                   |
//! | messages       | `message_ids`, `chat_id`                                     |
//! | chats          | `chat_ids`, `chat_id`                                        |
//! | files          | `file_ids`                                                   |
//! | rooms          | `room_id`                                                    |
//! | sent           | `sent_email_id`                                              |
//! | message_sent   | `chat_id`                                                    |
//! | deleted        | removes the deleted ids from every slot                      |
//!
//! Person-valued arguments of executed calls set `person`.

use crate::catalog;
use crate::records::ScheduleRecord;
use crate::types::{DialogueTurn, Payload, SessionMemory, ToolCall, ToolResult, Value, ValueKind};

fn set(m: &mut SessionMemory, slot: &str, v: Value) {
    m.entity_slots.insert(slot.to_string(), v);
}

fn set_schedule(m: &mut SessionMemory, r: &ScheduleRecord) {
    set(m, "schedule_id", Value::text(&r.id));
    set(m, "schedule_title", Value::text(&r.title));
    set(m, "schedule_start", Value::datetime(r.start_time));
    set(m, "schedule_is_meeting", Value::Bool(r.is_meeting));
}

const SCHEDULE_SLOTS: [&str; 4] = ["schedule_id", "schedule_title", "schedule_start", "schedule_is_meeting"];

fn forget_ids(m: &mut SessionMemory, ids: &[String]) {
    if m.slot_text("schedule_id").is_some_and(|s| ids.iter().any(|i| i == s)) {
        for s in SCHEDULE_SLOTS {
            m.entity_slots.remove(s);
        }
    }
    let mut emptied = Vec::new();
    for (k, v) in m.entity_slots.iter_mut() {
        match v {
            Value::List(l) => {
                let before = l.len();
                l.retain(|x| !ids.contains(x));
                if l.is_empty() && before > 0 {
                    emptied.push(k.clone());
                }
            }
            Value::Text(t) if ids.contains(t) && k.ends_with("_id") => emptied.push(k.clone()),
            _ => {}
        }
    }
    for k in emptied {
        m.entity_slots.remove(&k);
    }
}

/// Merges the slots one successful result contributes.
pub fn absorb_result(m: &mut SessionMemory, call: &ToolCall, result: &ToolResult) {
    absorb_persons(m, call);
    let Some(payload) = result.payload.as_ref().filter(|_| result.is_ok()) else { return };
    match payload {
        Payload::Emails { .. } => set(m, "email_ids", Value::List(payload.ids())),
        Payload::Summary { text, chat_ids, .. } => {
            set(m, "summary", Value::text(text));
            if let Some(c) = chat_ids.first() {
                set(m, "chat_id", Value::text(c));
            }
        }
        Payload::Schedules { records } => {
            if let Some(r) = records.first() {
                set_schedule(m, r);
            }
        }
        Payload::Availability { persons, free, busy } => {
            if let Some(f) = free.first() {
                set(m, "free_start", Value::datetime(f.start));
            }
            set(m, "persons", Value::List(persons.clone()));
            if let Some(r) = busy.first() {
                set_schedule(m, r);
            }
        }
        Payload::Todos { .. } => set(m, "todo_ids", Value::List(payload.ids())),
        Payload::Messages { records } => {
            set(m, "message_ids", Value::List(payload.ids()));
            if let Some(r) = records.first() {
                set(m, "chat_id", Value::text(&r.chat_id));
            }
        }
        Payload::Chats { records } => {
            set(m, "chat_ids", Value::List(payload.ids()));
            if let Some(r) = records.first() {
                set(m, "chat_id", Value::text(&r.id));
            }
        }
        Payload::Files { .. } => set(m, "file_ids", Value::List(payload.ids())),
        Payload::Rooms { records } => {
            if let Some(r) = records.first() {
                set(m, "room_id", Value::text(&r.id));
            }
        }
        Payload::Sent { email_id } => set(m, "sent_email_id", Value::text(email_id)),
        Payload::MessageSent { chat_id, .. } => set(m, "chat_id", Value::text(chat_id)),
        Payload::Deleted { ids } => forget_ids(m, ids),
    }
}

fn absorb_persons(m: &mut SessionMemory, call: &ToolCall) {
    let Some(spec) = catalog::tool(&call.api_name) else { return };
    for p in &spec.params {
        let person_list = matches!(p.name.as_str(), "to" | "cc" | "participants" | "persons" | "mentions");
        match (call.args.get(&p.name), p.value_kind) {
            (Some(Value::Text(t)), ValueKind::Person) => set(m, "person", Value::text(t)),
            (Some(Value::List(l)), ValueKind::StringList) if person_list => {
                if let Some(last) = l.last() {
                    set(m, "person", Value::text(last));
                }
            }
            _ => {}
        }
    }
}

/// Memory after `turn` completes: slots merged from its final calls,
/// `last_call` set when it executed any, window appended and trimmed.
pub fn update_memory(memory: &SessionMemory, turn: &DialogueTurn) -> SessionMemory {
    let mut m = memory.clone();
    let finals = turn.final_calls();
    for c in &finals {
        absorb_result(&mut m, &c.call, &c.result);
    }
    if let Some(last) = turn.calls.last() {
        m.last_call = Some((last.call.clone(), last.result.clone()));
    }
    m.turn_window.push_back(turn.clone());
    while m.turn_window.len() > m.window {
        m.turn_window.pop_front();
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{parse_datetime, CallRecord, WorkerLabel};

    fn turn(calls: Vec<(ToolCall, ToolResult)>) -> DialogueTurn {
        DialogueTurn {
            user_query: "q".into(),
            related: false,
            rewritten_query: "q".into(),
            intent: WorkerLabel::Wps365,
            plan: None,
            calls: calls
                .into_iter()
                .enumerate()
                .map(|(i, (call, result))| CallRecord { sub_task: i + 1, branch: 0, attempt: 0, call, result })
                .collect(),
            reply: String::new(),
            timestamp: parse_datetime("2024-06-04T10:00:00").unwrap(),
            clarification: vec![],
            error: None,
        }
    }

    fn schedule(id: &str) -> ScheduleRecord {
        ScheduleRecord {
            id: id.into(),
            title: "project discussion".into(),
            start_time: parse_datetime("2024-06-04T15:00:00").unwrap(),
            end_time: parse_datetime("2024-06-04T16:00:00").unwrap(),
            participants: vec!["Jiashu Xia".into()],
            location: String::new(),
            organizer: "Alex Sun".into(),
            is_meeting: true,
            room_id: None,
            reminder_minutes: None,
        }
    }

    #[test]
    fn schedule_slot_from_create() {
        let call = ToolCall::new("create_schedule")
            .arg("start_time", Value::text("2024-06-04T15:00:00"))
            .arg("participants", Value::list(["Jiashu Xia"]));
        let result = ToolResult::ok(Payload::Schedules { records: vec![schedule("s42")] });
        let m = update_memory(&SessionMemory::default(), &turn(vec![(call.clone(), result.clone())]));
        assert_eq!(m.slot_text("schedule_id"), Some("s42"));
        assert_eq!(m.slot_text("person"), Some("Jiashu Xia"));
        assert_eq!(m.last_call, Some((call, result)));
    }

    #[test]
    fn no_calls_only_grows_window() {
        let mut m = SessionMemory::default();
        m.entity_slots.insert("x".into(), Value::text("y"));
        let next = update_memory(&m, &turn(vec![]));
        assert_eq!(next.entity_slots, m.entity_slots);
        assert_eq!(next.turn_window.len(), 1);
        assert!(next.last_call.is_none());
    }

    #[test]
    fn window_evicts_oldest() {
        let mut m = SessionMemory::with_window(10);
        for i in 0..11 {
            let mut t = turn(vec![]);
            t.user_query = format!("q{i}");
            m = update_memory(&m, &t);
        }
        assert_eq!(m.turn_window.len(), 10);
        assert_eq!(m.turn_window.front().unwrap().user_query, "q1");
    }

    #[test]
    fn deletion_clears_slots() {
        let create = (
            ToolCall::new("create_schedule").arg("start_time", Value::text("2024-06-04T15:00:00")),
            ToolResult::ok(Payload::Schedules { records: vec![schedule("s9")] }),
        );
        let m = update_memory(&SessionMemory::default(), &turn(vec![create]));
        let delete = (
            ToolCall::new("delete_schedule").arg("schedule_id", Value::text("s9")),
            ToolResult::ok(Payload::Deleted { ids: vec!["s9".into()] }),
        );
        let m = update_memory(&m, &turn(vec![delete]));
        assert!(m.slot("schedule_id").is_none());
        assert!(m.slot("schedule_title").is_none());
    }
}
