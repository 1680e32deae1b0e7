//! Domain types shared by every stage of the pipeline.
//!
//! All of these are plain values with serde derives; the JSON produced by
//! `serde_json` is the wire format used by the HTTP service, JSONL datasets
//! and session snapshots.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::records::*;

/// Kinds a tool parameter can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueKind {
    String,
    Person,
    Datetime,
    DatetimeRange,
    Integer,
    Boolean,
    Enum,
    Id,
    IdList,
    StringList,
}

impl ValueKind {
    pub fn is_list(self) -> bool {
        matches!(self, ValueKind::IdList | ValueKind::StringList | ValueKind::DatetimeRange)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub description: String,
    pub value_kind: ValueKind,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enum_values: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    Email,
    Schedule,
    Meeting,
    Chat,
    Todo,
    OnlineDocuments,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub scenario: Scenario,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

impl ToolSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn required(&self) -> impl Iterator<Item = &ParamSpec> {
        self.params.iter().filter(|p| p.required)
    }
}

/// A typed argument value.
///
/// Datetimes are carried as ISO-8601 text (`2024-06-04T15:00:00`) and
/// datetime ranges as a two-element list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Text(String),
    List(Vec<String>),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn list<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Value::List(items.into_iter().map(Into::into).collect())
    }

    pub fn datetime(dt: NaiveDateTime) -> Self {
        Value::Text(fmt_datetime(dt))
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[String]> {
        match self {
            Value::List(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_datetime(&self) -> Option<NaiveDateTime> {
        self.as_text().and_then(parse_datetime)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Text(s) => write!(f, "{s}"),
            Value::List(v) => write!(f, "[{}]", v.join(", ")),
        }
    }
}

pub const DATETIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn fmt_datetime(dt: NaiveDateTime) -> String {
    dt.format(DATETIME_FORMAT).to_string()
}

/// Parses ISO datetimes with or without seconds.
pub fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, DATETIME_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
}

pub type Args = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub api_name: String,
    #[serde(default)]
    pub args: Args,
}

impl ToolCall {
    pub fn new(api_name: impl Into<String>) -> Self {
        ToolCall { api_name: api_name.into(), args: Args::new() }
    }

    pub fn arg(mut self, name: &str, value: Value) -> Self {
        self.args.insert(name.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolError {
    pub code: String,
    pub message: String,
}

/// Typed response body of a successful tool execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Emails { records: Vec<EmailRecord> },
    Schedules { records: Vec<ScheduleRecord> },
    Availability { persons: Vec<String>, free: Vec<Interval>, busy: Vec<ScheduleRecord> },
    Rooms { records: Vec<MeetingRoom> },
    Messages { records: Vec<ChatMessage> },
    Chats { records: Vec<GroupChat> },
    Todos { records: Vec<TodoItem> },
    Files { records: Vec<CloudFile> },
    Summary { text: String, source_ids: Vec<String>, chat_ids: Vec<String> },
    Sent { email_id: String },
    MessageSent { message_id: String, chat_id: String },
    Deleted { ids: Vec<String> },
}

impl Payload {
    /// Ids of the records carried by this payload, in payload order.
    pub fn ids(&self) -> Vec<String> {
        fn ids<T>(v: &[T], f: impl Fn(&T) -> &String) -> Vec<String> {
            v.iter().map(|r| f(r).clone()).collect()
        }
        match self {
            Payload::Emails { records } => ids(records, |r| &r.id),
            Payload::Schedules { records } => ids(records, |r| &r.id),
            Payload::Availability { busy, .. } => ids(busy, |r| &r.id),
            Payload::Rooms { records } => ids(records, |r| &r.id),
            Payload::Messages { records } => ids(records, |r| &r.id),
            Payload::Chats { records } => ids(records, |r| &r.id),
            Payload::Todos { records } => ids(records, |r| &r.id),
            Payload::Files { records } => ids(records, |r| &r.id),
            Payload::Summary { source_ids, .. } => source_ids.clone(),
            Payload::Sent { email_id } => vec![email_id.clone()],
            Payload::MessageSent { message_id, .. } => vec![message_id.clone()],
            Payload::Deleted { ids } => ids.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ToolError>,
}

impl ToolResult {
    pub fn ok(payload: Payload) -> Self {
        ToolResult { status: Status::Ok, payload: Some(payload), error: None }
    }

    pub fn err(code: impl Into<String>, message: impl Into<String>) -> Self {
        ToolResult { status: Status::Error, payload: None, error: Some(ToolError { code: code.into(), message: message.into() }) }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn error_code(&self) -> Option<&str> {
        self.error.as_ref().map(|e| e.code.as_str())
    }
}

/// Api name for sub-tasks that need no tool.
pub const NO_API: &str = "none";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTask {
    pub index: usize,
    pub text: String,
    pub api_name: String,
    pub evidence_id: String,
    #[serde(default)]
    pub depends_on: Vec<String>,
}

impl SubTask {
    pub fn new(index: usize, text: impl Into<String>, api_name: impl Into<String>) -> Self {
        SubTask { index, text: text.into(), api_name: api_name.into(), evidence_id: evidence_id(index), depends_on: Vec::new() }
    }
}

pub fn evidence_id(index: usize) -> String {
    format!("#E{index}")
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Plan {
    pub sub_tasks: Vec<SubTask>,
}

impl Plan {
    pub fn apis(&self) -> Vec<&str> {
        self.sub_tasks.iter().map(|s| s.api_name.as_str()).collect()
    }

    /// Checks consecutive evidence ids and backward-only dependencies.
    pub fn check(&self) -> Result<(), String> {
        for (i, st) in self.sub_tasks.iter().enumerate() {
            if st.index != i + 1 || st.evidence_id != evidence_id(i + 1) {
                return Err(format!("sub-task {} has index {} / {}", i + 1, st.index, st.evidence_id));
            }
            for d in &st.depends_on {
                let ok = d.strip_prefix("#E").and_then(|n| n.parse::<usize>().ok()).is_some_and(|n| n >= 1 && n < st.index);
                if !ok {
                    return Err(format!("{} depends on {d}", st.evidence_id));
                }
            }
        }
        Ok(())
    }
}

/// Worker agents the master node can dispatch to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerLabel {
    Chitchat,
    TextToImage,
    OnlineSearch,
    Wps365,
}

impl WorkerLabel {
    pub const ALL: [WorkerLabel; 4] =
        [WorkerLabel::Chitchat, WorkerLabel::TextToImage, WorkerLabel::OnlineSearch, WorkerLabel::Wps365];

    pub fn as_str(self) -> &'static str {
        match self {
            WorkerLabel::Chitchat => "chitchat",
            WorkerLabel::TextToImage => "text_to_image",
            WorkerLabel::OnlineSearch => "online_search",
            WorkerLabel::Wps365 => "wps365",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s.trim())
    }
}

/// One executed tool call inside a turn.
///
/// `branch` distinguishes fan-out calls of the same sub-task; `attempt`
/// counts repair retries from 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub sub_task: usize,
    pub branch: usize,
    pub attempt: usize,
    pub call: ToolCall,
    pub result: ToolResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub user_query: String,
    pub related: bool,
    pub rewritten_query: String,
    pub intent: WorkerLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Plan>,
    #[serde(default)]
    pub calls: Vec<CallRecord>,
    pub reply: String,
    pub timestamp: NaiveDateTime,
    /// Parameter names the assistant asked the user for.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clarification: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DialogueTurn {
    /// The last attempt of every (sub-task, branch), in execution order.
    pub fn final_calls(&self) -> Vec<&CallRecord> {
        let mut out: Vec<&CallRecord> = Vec::new();
        for c in &self.calls {
            match out.iter_mut().find(|o| o.sub_task == c.sub_task && o.branch == c.branch) {
                Some(slot) => *slot = c,
                None => out.push(c),
            }
        }
        out
    }
}

pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMemory {
    pub entity_slots: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_call: Option<(ToolCall, ToolResult)>,
    pub turn_window: VecDeque<DialogueTurn>,
    pub window: usize,
}

impl Default for SessionMemory {
    fn default() -> Self {
        Self::with_window(DEFAULT_WINDOW)
    }
}

impl SessionMemory {
    pub fn with_window(window: usize) -> Self {
        SessionMemory { entity_slots: BTreeMap::new(), last_call: None, turn_window: VecDeque::new(), window: window.max(1) }
    }

    pub fn is_empty(&self) -> bool {
        self.entity_slots.is_empty() && self.turn_window.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<&Value> {
        self.entity_slots.get(name)
    }

    pub fn slot_text(&self, name: &str) -> Option<&str> {
        self.slot(name).and_then(Value::as_text)
    }

    pub fn slot_list(&self, name: &str) -> Option<&[String]> {
        self.slot(name).and_then(Value::as_list).filter(|l| !l.is_empty())
    }

    /// Timestamp of the most recent remembered turn.
    pub fn last_timestamp(&self) -> Option<NaiveDateTime> {
        self.turn_window.back().map(|t| t.timestamp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub turns: Vec<DialogueTurn>,
    pub memory: SessionMemory,
}

impl Session {
    pub fn new(id: impl Into<String>, window: usize) -> Self {
        Session { id: id.into(), turns: Vec::new(), memory: SessionMemory::with_window(window) }
    }
}
