//! Utterance grammar shared by the reference rewriter, planner and solver and
//! by the dialogue generator.
//!
//! A clause is a lead phrase naming the tool followed by comma-separated
//! parameter phrases, e.g.
//!
//! ```text
//! Search for the emails from Wei Zhang, with subject containing "budget", received after 9 AM yesterday
//! Update the 3 PM project discussion meeting today: change start time to 2 PM
//! ```
//!
//! Quoted text is masked before any matching so values may contain commas.
//! Parsing yields raw surface values (`"3 PM tomorrow"`, `"#E1"`); turning
//! them into typed arguments is the solver's job. Every tool has one
//! canonical rendering, and `parse_clause(render_clause(..))` returns the
//! same raw arguments. Deictic forms ("Summarize those emails") mark the
//! parameters they leave to context together with the memory slot that can
//! supply them.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use chrono::NaiveDateTime;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::records::ScheduleRecord;
use crate::timeexpr;
use crate::types::{Payload, Value, ValueKind};

/// A parameter value as it appears in text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RawValue {
    Text(String),
    List(Vec<String>),
    Int(i64),
    Bool(bool),
    /// `<?name>`: a value the rewriter could not resolve.
    Placeholder(String),
}

impl RawValue {
    pub fn text(s: impl Into<String>) -> Self {
        RawValue::Text(s.into())
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            RawValue::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Evidence references (`#E2`) inside this value.
    pub fn evidence_refs(&self) -> Vec<String> {
        let re = evidence_re();
        match self {
            RawValue::Text(s) => re.find_iter(s).map(|m| m.as_str().to_string()).collect(),
            RawValue::List(v) => v.iter().flat_map(|s| re.find_iter(s).map(|m| m.as_str().to_string())).collect(),
            _ => vec![],
        }
    }
}

pub type RawArgs = BTreeMap<String, RawValue>;

fn evidence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"#E\d+").unwrap())
}

/// Placeholder marker for an unresolved parameter.
pub fn placeholder(param: &str) -> String {
    format!("<?{param}>")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    /// Person name.
    P,
    /// Person list joined by "and".
    PL,
    /// Quoted text.
    T,
    /// Unquoted free text to the end of the segment.
    U,
    /// Free text to the end of the clause, across commas.
    R,
    /// Datetime expression.
    D,
    /// Day expression.
    Day,
    N,
    I,
    IL,
    E,
    /// Generic list joined by "and".
    S,
    /// Schedule reference: an id, an evidence id or a description.
    Ref,
}

impl Slot {
    fn from_name(s: &str) -> Slot {
        match s {
            "P" => Slot::P,
            "PL" => Slot::PL,
            "T" => Slot::T,
            "U" => Slot::U,
            "R" => Slot::R,
            "D" => Slot::D,
            "DAY" => Slot::Day,
            "N" => Slot::N,
            "I" => Slot::I,
            "IL" => Slot::IL,
            "E" => Slot::E,
            "S" => Slot::S,
            "REF" => Slot::Ref,
            other => panic!("unknown template slot {other}"),
        }
    }

    fn pattern(self) -> String {
        const PERSON: &str = r"[A-Z][A-Za-z'\-]*(?: [A-Z][A-Za-z'\-]*){0,3}";
        const ID: &str = r"[a-z]+\d+|#E\d+";
        const DAY: &str = r"(?i:today|tomorrow|yesterday|(?:on|next|last) (?:monday|tuesday|wednesday|thursday|friday|saturday|sunday)|on \d{4}-\d{2}-\d{2})";
        let body = match self {
            Slot::P => PERSON.to_string(),
            Slot::PL => format!("{PERSON}(?: and {PERSON})*"),
            Slot::T => r#""Q\d+""#.to_string(),
            Slot::U | Slot::R | Slot::D | Slot::S => ".+".to_string(),
            Slot::Day => DAY.to_string(),
            Slot::N => r"\d+".to_string(),
            Slot::I => ID.to_string(),
            Slot::IL => format!("(?:{ID})(?: and (?:{ID}))*"),
            Slot::E => "[a-z]+".to_string(),
            Slot::Ref => {
                format!(r"(?i:(?:schedules?|meetings?|events?) )?(?:s\d+|#E\d+)|.+? (?i:meeting|schedule|event)(?: {DAY})?")
            }
        };
        format!(r"(<\?[a-z_]+>|{body})")
    }
}

/// How a matched phrase assigns parameters.
#[derive(Debug, Clone)]
enum Set {
    /// Value of capture group `i`.
    G(usize),
    Fixed(RawValue),
    /// Midnight of the day in group `i`.
    DayStart(usize),
    /// End of the day in group `i` (`now` for today).
    DayEnd(usize),
    /// Left to context; the memory slot that can fill it.
    Deictic(&'static str),
}

#[derive(Debug)]
struct Pattern {
    re: Regex,
    slots: Vec<Slot>,
    sets: Vec<(&'static str, Set)>,
}

#[derive(Debug)]
struct Lead {
    pattern: Pattern,
    /// Render text for deictic leads.
    render: Option<&'static str>,
    has_rest: bool,
}

#[derive(Debug)]
struct Phrase {
    pattern: Pattern,
    greedy: bool,
}

#[derive(Debug)]
struct ApiGrammar {
    api: &'static str,
    /// Canonical lead; `{REF}` stands for `lead_param`.
    lead: &'static str,
    lead_param: Option<&'static str>,
    joiner: &'static str,
    canonical: BTreeMap<&'static str, &'static str>,
    flags: BTreeMap<&'static str, (&'static str, &'static str)>,
    deictic: BTreeMap<&'static str, &'static str>,
    phrases: Vec<Phrase>,
}

#[derive(Debug)]
pub struct Grammar {
    apis: Vec<ApiGrammar>,
    /// All leads in match priority order, with the index of their api.
    leads: Vec<(usize, Lead)>,
}

fn compile(tpl: &str, tail: &str) -> (Regex, Vec<Slot>) {
    let mut re = String::from("^");
    let mut slots = Vec::new();
    let mut rest = tpl;
    while let Some(open) = rest.find('{') {
        let close = open + rest[open..].find('}').expect("unclosed slot");
        if open > 0 {
            re.push_str(&format!("(?i:{})", &rest[..open]));
        }
        let slot = Slot::from_name(&rest[open + 1..close]);
        re.push_str(&slot.pattern());
        slots.push(slot);
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        re.push_str(&format!("(?i:{rest})"));
    }
    re.push_str(tail);
    (Regex::new(&re).unwrap_or_else(|e| panic!("bad template {tpl}: {e}")), slots)
}

struct Builder {
    g: Grammar,
}

impl Builder {
    fn cur(&mut self) -> &mut ApiGrammar {
        self.g.apis.last_mut().unwrap()
    }

    fn idx(&self) -> usize {
        self.g.apis.len() - 1
    }

    fn api(&mut self, api: &'static str, lead: &'static str, lead_param: Option<&'static str>, joiner: &'static str) {
        self.g.apis.push(ApiGrammar {
            api,
            lead,
            lead_param,
            joiner,
            canonical: BTreeMap::new(),
            flags: BTreeMap::new(),
            deictic: BTreeMap::new(),
            phrases: vec![],
        });
        let sets = lead_param.map(|p| vec![(p, Set::G(0))]).unwrap_or_default();
        self.lead_inner(lead, sets, None, true);
    }

    fn lead_inner(&mut self, tpl: &str, sets: Vec<(&'static str, Set)>, render: Option<&'static str>, has_rest: bool) {
        let joiner = self.cur().joiner;
        let tail = if has_rest { format!("(?:{}(?P<rest>.+))?$", regex::escape(joiner)) } else { "$".into() };
        let (re, slots) = compile(tpl, &tail);
        let idx = self.idx();
        self.g.leads.push((idx, Lead { pattern: Pattern { re, slots, sets }, render, has_rest }));
    }

    /// Alternative lead that may carry parameters and take further phrases.
    fn alt_lead(&mut self, tpl: &str, sets: Vec<(&'static str, Set)>) {
        self.lead_inner(tpl, sets, None, true);
    }

    /// Alternative lead that is a whole segment.
    fn alt_lead_only(&mut self, tpl: &str, sets: Vec<(&'static str, Set)>) {
        self.lead_inner(tpl, sets, None, false);
    }

    /// Deictic lead; `context` params come from the given memory slots.
    fn deictic_lead(&mut self, render: &'static str, tpl: &str, context: &[(&'static str, &'static str)]) {
        let sets = context.iter().map(|(p, s)| (*p, Set::Deictic(s))).collect();
        self.lead_inner(tpl, sets, Some(render), true);
    }

    fn phrase(&mut self, tpl: &str, sets: Vec<(&'static str, Set)>, greedy: bool) {
        let (re, slots) = compile(tpl, "$");
        self.cur().phrases.push(Phrase { pattern: Pattern { re, slots, sets }, greedy });
    }

    /// Canonical phrase for `param`, its value in the single slot.
    fn p(&mut self, param: &'static str, tpl: &'static str) {
        self.cur().canonical.insert(param, tpl);
        self.phrase(tpl, vec![(param, Set::G(0))], false);
    }

    fn alt(&mut self, tpl: &str, sets: Vec<(&'static str, Set)>) {
        self.phrase(tpl, sets, false);
    }

    fn greedy(&mut self, tpl: &str, sets: Vec<(&'static str, Set)>) {
        self.phrase(tpl, sets, true);
    }

    fn flag(&mut self, param: &'static str, yes: &'static str, no: &'static str) {
        self.cur().flags.insert(param, (yes, no));
        self.phrase(yes, vec![(param, Set::Fixed(RawValue::Bool(true)))], false);
        self.phrase(no, vec![(param, Set::Fixed(RawValue::Bool(false)))], false);
    }

    fn deictic(&mut self, param: &'static str, slot: &'static str, tpl: &'static str) {
        self.cur().deictic.insert(param, tpl);
        self.phrase(tpl, vec![(param, Set::Deictic(slot))], false);
    }
}

fn g(i: usize) -> Set {
    Set::G(i)
}

fn build() -> Grammar {
    let mut b = Builder { g: Grammar { apis: vec![], leads: vec![] } };

    // Email
    b.api("search_email", "Search for the emails", None, " ");
    b.alt_lead("Search (?:for )?(?:the |my )?emails", vec![]);
    b.p("sender", "from {P}");
    b.p("recipient", "sent to {P}");
    b.p("cc", "with {P} in cc");
    b.p("subject_keywords", "with subject containing {T}");
    b.p("body_keywords", "mentioning {T}");
    b.p("folder", "in the {E} folder");
    b.flag("has_attachment", "with attachments", "without attachments");
    b.p("start_time", "received after {D}");
    b.p("end_time", "received before {D}");
    b.p("read_status", "that are {E}");
    b.p("limit", "limited to {N} results");
    b.alt("(?:that )?(?:I )?received {DAY}", vec![("start_time", Set::DayStart(0)), ("end_time", Set::DayEnd(0))]);

    b.api("summary_email", "Summarize the emails", None, " ");
    b.deictic_lead(
        "Summarize those emails",
        "Summarize (?:those|these|the found|the same) emails|Summarize them",
        &[("email_ids", "email_ids")],
    );
    b.alt_lead("Summarize (?:the |my )?emails?", vec![]);
    b.p("email_ids", "{IL}");
    b.p("content", "with content {T}");

    b.api("send_email", "Send an email", None, " ");
    b.deictic_lead("Send the summary by email", "Send the summary (?:by|as an) email", &[("body", "summary")]);
    b.deictic_lead(
        "Forward those emails",
        "Forward (?:those|these|them|the same) emails|Forward them",
        &[("forward_email_ids", "email_ids")],
    );
    b.alt_lead_only("Forward (?:the )?emails {IL} to {PL}", vec![("forward_email_ids", g(0)), ("to", g(1))]);
    b.alt_lead("Send (?:an )?email", vec![]);
    b.p("to", "to {PL}");
    b.p("subject", "with subject {T}");
    b.p("body", "with body {T}");
    b.p("cc", "copying {PL}");
    b.p("forward_email_ids", "forwarding the emails {IL}");
    b.greedy("content: {R}", vec![("body", g(0))]);
    b.alt("subject: {U}", vec![("subject", g(0))]);

    // Schedule
    b.api("create_schedule", "Create a schedule", None, " ");
    b.deictic_lead(
        "Create a schedule at that free time",
        "(?:Create|Book) (?:a |an )?(?:meeting|schedule|event) (?:at|in) (?:that|the first|the) free (?:time|slot)",
        &[("start_time", "free_start")],
    );
    b.alt_lead("(?:Create|Book|Schedule|Add) (?:a |an )?(?:meeting|schedule|event)", vec![]);
    b.p("title", "titled {T}");
    b.p("start_time", "starting {D}");
    b.p("end_time", "ending {D}");
    b.p("participants", "inviting {PL}");
    b.p("location", "located in {T}");
    b.alt("at {D}", vec![("start_time", g(0))]);
    b.alt("the topic is {U}", vec![("title", g(0))]);
    b.alt("invite {PL}", vec![("participants", g(0))]);

    b.api("update_schedule", "Update the {REF}", Some("schedule_id"), ": ");
    b.deictic_lead(
        "Update that schedule",
        "Update (?:that|this|the same) (?:meeting|schedule|event)|Update it",
        &[("schedule_id", "schedule_id")],
    );
    b.alt_lead_only("Move it (?:up )?to {D}", vec![("schedule_id", Set::Deictic("schedule_id")), ("start_time", g(0))]);
    b.alt_lead_only("Move the start time (?:up )?to {D}", vec![("start_time", g(0))]);
    b.p("title", "change title to {T}");
    b.p("start_time", "change start time to {D}");
    b.p("end_time", "change end time to {D}");
    b.p("participants", "change participants to {PL}");
    b.p("location", "change location to {T}");
    b.p("reminder_minutes", "set a reminder {N} minutes before");
    b.alt("change (?:the )?(?:topic|title) to {U}", vec![("title", g(0))]);
    b.alt("(?:move|change) the start time (?:up )?to {D}", vec![("start_time", g(0))]);

    b.api("find_schedule_status", "Check the free time", None, " ");
    b.alt_lead("Check {PL}'s free time", vec![("persons", g(0))]);
    b.p("persons", "of {PL}");
    b.p("start_time", "from {D}");
    b.p("end_time", "until {D}");
    b.alt("(?:on )?{DAY}", vec![("start_time", Set::DayStart(0)), ("end_time", Set::DayEnd(0))]);

    // Todo (before delete_schedule so "Delete the todos" is not read as a schedule reference)
    b.api("delete_todo", "Delete the todos", None, " ");
    b.deictic_lead("Delete those todos", "Delete (?:those|these|that|the same) todos?|Delete them", &[("todo_ids", "todo_ids")]);
    b.alt_lead("(?:Delete|Remove) (?:the )?todos?", vec![]);
    b.p("todo_ids", "{IL}");

    b.api("delete_schedule", "Delete the {REF}", Some("schedule_id"), " ");
    b.deictic_lead(
        "Delete that schedule",
        "(?:Delete|Cancel) (?:that|this|the same) (?:meeting|schedule|event)|Delete it",
        &[("schedule_id", "schedule_id")],
    );
    b.alt_lead_only("Cancel (?:the )?{REF}", vec![("schedule_id", g(0))]);
    b.alt_lead_only("Delete all (?:the )?{REF}", vec![("schedule_id", g(0))]);

    // Meeting
    b.api("create_meeting", "Set up a meeting", None, " ");
    b.p("title", "titled {T}");
    b.p("start_time", "starting {D}");
    b.p("end_time", "ending {D}");
    b.p("participants", "inviting {PL}");
    b.p("room_id", "in room {I}");

    b.api("find_meetings", "Find the meetings", None, " ");
    b.alt_lead("Find (?:all )?(?:the |my )?meetings?", vec![]);
    b.p("start_time", "from {D}");
    b.p("end_time", "until {D}");
    b.alt("at {D}", vec![("start_time", g(0)), ("end_time", g(0))]);
    b.alt("(?:on )?{DAY}", vec![("start_time", Set::DayStart(0)), ("end_time", Set::DayEnd(0))]);

    b.api("find_meeting_room", "Find a meeting room", None, " ");
    b.p("start_time", "from {D}");
    b.p("end_time", "until {D}");
    b.p("capacity", "for {N} people");
    b.p("equipment", "with {S}");
    b.p("building", "in the {E} building");

    // Chat
    b.api("search_chatmsg", "Search for the chat messages", None, " ");
    b.p("chat_id", "in chat {I}");
    b.p("sender", "from {P}");
    b.p("keywords", "containing {T}");
    b.p("start_time", "sent after {D}");
    b.p("end_time", "sent before {D}");
    b.p("mentioned", "that mention {P}");
    b.p("limit", "limited to {N} results");

    b.api("send_chatmsg", "Send a chat message", None, " ");
    b.deictic_lead("Send the summary as a chat message", "Send the summary as a (?:chat )?message", &[("content", "summary")]);
    b.p("chat_id", "to {I}");
    b.p("content", "with content {T}");
    b.p("mentions", "mentioning {PL}");
    b.deictic("chat_id", "chat_id", "to that chat");

    b.api("withdraw_chatmsg", "Withdraw the chat messages", None, " ");
    b.deictic_lead(
        "Withdraw those messages",
        "Withdraw (?:those|these|that|the same) (?:chat )?messages?|Withdraw them",
        &[("message_ids", "message_ids")],
    );
    b.p("message_ids", "{IL}");
    b.p("chat_id", "in chat {I}");

    b.api("summary_chatmsg", "Summarize the chats", None, " ");
    b.deictic_lead(
        "Summarize those messages",
        "Summarize (?:those|these|the same) (?:chat )?messages",
        &[("ids", "message_ids")],
    );
    b.deictic_lead("Summarize those chats", "Summarize (?:those|these|that|the same) (?:group )?chats?", &[("ids", "chat_ids")]);
    b.alt_lead("Summarize (?:the )?(?:chat messages|group chats|messages)", vec![]);
    b.p("ids", "{IL}");

    b.api("search_group_chat", "Search for the group chats", None, " ");
    b.p("keywords", "named {T}");

    b.api("find_recent_chat_list", "Show the recent chats", None, " ");
    b.p("time_range", "between {D} and {D}");
    b.p("limit", "limited to {N} results");

    // Todo
    b.api("create_todo", "Create a todo", None, " ");
    b.alt_lead("(?:Create|Add) (?:a )?(?:todo|to-do)(?: item)?", vec![]);
    b.p("title", "titled {T}");
    b.p("due_time", "due {D}");

    b.api("find_todo", "Find the todos", None, " ");
    b.alt_lead("(?:Find|Show) (?:the |my )?todos", vec![]);
    b.p("keywords", "containing {T}");
    b.p("status", "that are {E}");
    b.p("due_before", "due before {D}");

    // Online documents
    b.api("search_files", "Search for the files", None, " ");
    b.alt_lead("Search (?:for )?(?:the |my )?(?:files|documents)", vec![]);
    b.p("name_keywords", "named {T}");
    b.p("content_keywords", "containing {T}");
    b.p("owner", "owned by {P}");
    b.p("file_type", "of type {E}");
    b.p("folder", "in the folder {T}");
    b.p("created_after", "created after {D}");
    b.p("created_before", "created before {D}");
    b.p("modified_after", "modified after {D}");
    b.p("modified_before", "modified before {D}");
    b.p("shared_with", "shared with {P}");
    b.flag("starred", "that are starred", "that are not starred");
    b.p("min_size_kb", "larger than {N} KB");
    b.p("limit", "limited to {N} results");

    b.api("summary_files", "Summarize the files", None, " ");
    b.deictic_lead(
        "Summarize those files",
        "Summarize (?:those|these|the same) (?:files|documents)",
        &[("file_ids", "file_ids")],
    );
    b.alt_lead("Summarize (?:the )?documents", vec![]);
    b.p("file_ids", "{IL}");

    // Deictic and alternative leads were pushed right after each canonical
    // lead; try deictic and parameter-carrying forms before plain prefixes.
    let mut g = b.g;
    g.leads.sort_by_key(|(_, l)| if l.render.is_some() || !l.has_rest { 0 } else { 1 });
    for a in &g.apis {
        let spec = catalog::tool(a.api).unwrap_or_else(|| panic!("grammar names unknown tool {}", a.api));
        for p in a.canonical.keys().chain(a.flags.keys()) {
            assert!(spec.param(p).is_some(), "{}: grammar names unknown param {p}", a.api);
        }
    }
    g
}

pub fn grammar() -> &'static Grammar {
    static G: OnceLock<Grammar> = OnceLock::new();
    G.get_or_init(build)
}

/// Replaces each `"..."` with `"Q<n>"`, returning the masked text and the
/// original contents.
pub fn mask_quotes(text: &str) -> (String, Vec<String>) {
    let mut out = String::with_capacity(text.len());
    let mut quotes = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('"') {
        let Some(len) = rest[open + 1..].find('"') else { break };
        out.push_str(&rest[..open]);
        out.push_str(&format!("\"Q{}\"", quotes.len()));
        quotes.push(rest[open + 1..open + 1 + len].to_string());
        rest = &rest[open + 1 + len + 1..];
    }
    out.push_str(rest);
    (out, quotes)
}

pub fn unmask(text: &str, quotes: &[String]) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r#""Q(\d+)""#).unwrap());
    re.replace_all(text, |c: &regex::Captures| {
        let i: usize = c[1].parse().unwrap();
        format!("\"{}\"", quotes.get(i).map_or("", String::as_str))
    })
    .into_owned()
}

/// Clause separators, in the order they are tried.
pub const CLAUSE_SEPARATORS: [&str; 3] = [" and then ", ", then ", "; then "];

/// Splits a query into clauses on sequencing markers outside quotes.
pub fn split_clauses(text: &str) -> Vec<String> {
    let (masked, quotes) = mask_quotes(text);
    let mut parts = vec![masked];
    for sep in CLAUSE_SEPARATORS {
        parts = parts
            .into_iter()
            .flat_map(|p| {
                let lower = p.to_lowercase();
                let mut out = Vec::new();
                let mut last = 0;
                for (i, _) in lower.match_indices(sep) {
                    out.push(p[last..i].to_string());
                    last = i + sep.len();
                }
                out.push(p[last..].to_string());
                out
            })
            .collect();
    }
    parts.into_iter().map(|p| unmask(p.trim(), &quotes)).filter(|p| !p.is_empty()).collect()
}

/// Result of matching one clause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedClause {
    pub api: String,
    pub args: RawArgs,
    /// Parameters left to context, with the memory slot able to fill them.
    pub context: Vec<(String, String)>,
    /// Segments no phrase recognized.
    pub unmatched: Vec<String>,
    /// The clause wording with every captured value removed.
    #[serde(default)]
    pub skeleton: String,
}

impl ParsedClause {
    pub fn is_deictic(&self) -> bool {
        !self.context.is_empty()
    }

    pub fn context_slot(&self, param: &str) -> Option<&str> {
        self.context.iter().find(|(p, _)| p == param).map(|(_, s)| s.as_str())
    }
}

fn reference_now() -> NaiveDateTime {
    crate::types::parse_datetime("2024-01-03T12:00:00").unwrap()
}

fn capture_value(slot: Slot, raw: &str, quotes: &[String], param: &str) -> Option<RawValue> {
    if let Some(name) = raw.strip_prefix("<?").and_then(|r| r.strip_suffix('>')) {
        return Some(RawValue::Placeholder(name.to_string()));
    }
    let split = |s: &str| s.split(" and ").map(|x| x.trim().to_string()).collect::<Vec<_>>();
    let v = match slot {
        Slot::T => {
            let i: usize = raw.trim_matches('"').trim_start_matches('Q').parse().ok()?;
            RawValue::Text(quotes.get(i)?.clone())
        }
        Slot::PL | Slot::IL | Slot::S => RawValue::List(split(&unmask(raw, quotes))),
        Slot::N => RawValue::Int(raw.parse().ok()?),
        Slot::D => {
            timeexpr::parse_datetime_expr(raw, reference_now())?;
            RawValue::Text(raw.trim().to_string())
        }
        Slot::E => {
            let ok = param_kind(param).is_some_and(|(k, e)| k == ValueKind::Enum && e.iter().any(|x| x == raw));
            if !ok {
                return None;
            }
            RawValue::Text(raw.to_string())
        }
        Slot::Ref => {
            let raw = raw.trim();
            let id = raw.split_once(' ').map_or(raw, |(_, id)| id);
            if raw.contains(' ') && is_schedule_id(id) {
                RawValue::Text(id.to_string())
            } else {
                RawValue::Text(unmask(raw, quotes))
            }
        }
        _ => RawValue::Text(unmask(raw.trim(), quotes)),
    };
    Some(v)
}

/// `s12` or `#E3`: a reference the solver resolves without memory.
pub fn is_schedule_id(s: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:s\d+|#E\d+)$").unwrap()).is_match(s)
}

/// Kind and enum values of `param` in whichever tool defines it first.
fn param_kind(param: &str) -> Option<(ValueKind, Vec<String>)> {
    catalog::catalog()
        .iter()
        .flat_map(|t| t.params.iter())
        .find(|p| p.name == param)
        .map(|p| (p.value_kind, p.enum_values.clone().unwrap_or_default()))
}

/// `target` with the spans of all value groups (and `rest`) blanked out.
fn literal_part(pat: &Pattern, caps: &regex::Captures, target: &str) -> String {
    let mut spans: Vec<(usize, usize)> =
        (1..=pat.slots.len()).filter_map(|i| caps.get(i)).map(|m| (m.start(), m.end())).collect();
    if let Some(r) = caps.name("rest") {
        spans.push((r.start(), r.end()));
    }
    spans.sort();
    let mut out = String::new();
    let mut at = 0;
    for (a, b) in spans {
        if a >= at {
            out.push_str(&target[at..a]);
            at = b;
        }
    }
    out.push_str(&target[at..]);
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn push_skeleton(out: &mut ParsedClause, part: &str) {
    let part = part.trim_matches(|c: char| c == ',' || c == ':' || c.is_whitespace());
    if part.is_empty() {
        return;
    }
    if !out.skeleton.is_empty() {
        out.skeleton.push(' ');
    }
    out.skeleton.push_str(part);
}

fn apply(pat: &Pattern, caps: &regex::Captures, quotes: &[String], api: &str, out: &mut ParsedClause) -> bool {
    let spec = catalog::tool(api);
    let group = |i: usize| caps.get(i + 1).map(|m| m.as_str());
    let mut staged: Vec<(String, Option<RawValue>, Option<&str>)> = Vec::new();
    for (param, set) in &pat.sets {
        let enum_param = spec.and_then(|s| s.param(param)).is_some_and(|p| p.value_kind == ValueKind::Enum);
        let value = match set {
            Set::G(i) => {
                let Some(raw) = group(*i) else { return false };
                let slot = pat.slots[*i];
                let v = if slot == Slot::E && enum_param {
                    let ok = spec
                        .and_then(|s| s.param(param))
                        .and_then(|p| p.enum_values.as_ref())
                        .is_some_and(|e| e.iter().any(|x| x == raw));
                    ok.then(|| RawValue::Text(raw.to_string()))
                } else {
                    capture_value(slot, raw, quotes, param)
                };
                match v {
                    Some(v) => Some(v),
                    None => return false,
                }
            }
            Set::Fixed(v) => Some(v.clone()),
            Set::DayStart(i) => Some(RawValue::Text(group(*i).unwrap_or("today").to_lowercase())),
            Set::DayEnd(i) => {
                let day = group(*i).unwrap_or("today").to_lowercase();
                Some(RawValue::Text(if day == "today" { "now".into() } else { format!("end of {day}") }))
            }
            Set::Deictic(slot) => {
                staged.push((param.to_string(), None, Some(slot)));
                continue;
            }
        };
        staged.push((param.to_string(), value, None));
    }
    // Datetime range captures two groups into one list parameter.
    if pat.slots.len() == 2 && pat.slots.iter().all(|s| *s == Slot::D) && pat.sets.len() == 1 {
        let (a, b) = (group(0).unwrap_or_default(), group(1).unwrap_or_default());
        staged = vec![(pat.sets[0].0.to_string(), Some(RawValue::List(vec![a.to_string(), b.to_string()])), None)];
    }
    for (param, value, slot) in staged {
        match (value, slot) {
            (Some(v), _) => {
                out.args.entry(param).or_insert(v);
            }
            (None, Some(slot)) => {
                if !out.context.iter().any(|(p, _)| *p == param) {
                    out.context.push((param, slot.to_string()));
                }
            }
            (None, None) => {}
        }
    }
    true
}

/// Matches a single clause against the grammar.
pub fn parse_clause(text: &str) -> Option<ParsedClause> {
    let gr = grammar();
    let (masked, quotes) = mask_quotes(text.trim());
    let masked = masked.trim_end_matches('?').trim_end().to_string();
    let segs: Vec<&str> = masked.split(", ").collect();
    let first = segs[0].trim();
    for (ai, lead) in &gr.leads {
        let Some(caps) = lead.pattern.re.captures(first) else { continue };
        let api = gr.apis[*ai].api;
        let mut out = ParsedClause {
            api: api.to_string(),
            args: RawArgs::new(),
            context: vec![],
            unmatched: vec![],
            skeleton: String::new(),
        };
        if !apply(&lead.pattern, &caps, &quotes, api, &mut out) {
            continue;
        }
        push_skeleton(&mut out, &literal_part(&lead.pattern, &caps, first));
        let mut rest: Vec<String> = Vec::new();
        if let Some(r) = caps.name("rest") {
            rest.push(r.as_str().to_string());
        }
        rest.extend(segs[1..].iter().map(|s| s.to_string()));
        parse_phrases(&gr.apis[*ai], &rest, &quotes, &mut out);
        return Some(out);
    }
    None
}

fn parse_phrases(ag: &ApiGrammar, segs: &[String], quotes: &[String], out: &mut ParsedClause) {
    let mut i = 0;
    'seg: while i < segs.len() {
        let seg = segs[i].trim();
        let joined = segs[i..].join(", ");
        for ph in &ag.phrases {
            let target = if ph.greedy { joined.as_str() } else { seg };
            if let Some(caps) = ph.pattern.re.captures(target) {
                if apply(&ph.pattern, &caps, quotes, ag.api, out) {
                    push_skeleton(out, &literal_part(&ph.pattern, &caps, target));
                    i = if ph.greedy { segs.len() } else { i + 1 };
                    continue 'seg;
                }
            }
        }
        if !seg.is_empty() {
            out.unmatched.push(unmask(seg, quotes));
            push_skeleton(out, seg);
        }
        i += 1;
    }
}

/// Whether any lead recognizes the clause.
pub fn recognizes(text: &str) -> bool {
    parse_clause(text).is_some()
}

fn render_value(v: &RawValue) -> String {
    match v {
        RawValue::Text(s) => s.clone(),
        RawValue::List(items) => items.join(" and "),
        RawValue::Int(i) => i.to_string(),
        RawValue::Bool(b) => b.to_string(),
        RawValue::Placeholder(p) => placeholder(p),
    }
}

fn fill(tpl: &str, v: &RawValue) -> String {
    let mut out = String::new();
    let mut rest = tpl;
    let mut items: Vec<String> = match v {
        RawValue::List(l) if l.len() == 2 && tpl.matches('{').count() == 2 => l.clone(),
        _ => vec![],
    };
    items.reverse();
    while let Some(open) = rest.find('{') {
        let close = open + rest[open..].find('}').unwrap();
        out.push_str(&rest[..open]);
        let slot = &rest[open + 1..close];
        let value = match items.pop() {
            Some(item) => item,
            None if slot == "T" && !matches!(v, RawValue::Placeholder(_)) => format!("\"{}\"", render_value(v)),
            None => render_value(v),
        };
        out.push_str(&value);
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    out
}

fn api_grammar(api: &str) -> Option<&'static ApiGrammar> {
    grammar().apis.iter().find(|a| a.api == api)
}

/// Canonical rendering of one clause, parameters in catalog order.
pub fn render_clause(api: &str, args: &RawArgs) -> String {
    render_with_context(api, args, &[])
}

/// Rendering where the `context` parameters are referred to deictically;
/// the remaining parameters use canonical phrases.
pub fn render_with_context(api: &str, args: &RawArgs, context: &[(&str, &str)]) -> String {
    let ag = api_grammar(api).unwrap_or_else(|| panic!("no grammar for {api}"));
    let spec = catalog::tool(api).expect("grammar tools are in the catalog");
    let gr = grammar();
    let mut covered: Vec<&str> = Vec::new();
    let mut lead = None;
    if !context.is_empty() {
        // The deictic lead covering the most context parameters.
        let best = gr
            .leads
            .iter()
            .filter(|(ai, l)| gr.apis[*ai].api == api && l.render.is_some())
            .filter_map(|(_, l)| {
                let params: Vec<&str> = l
                    .pattern
                    .sets
                    .iter()
                    .filter_map(|(p, s)| match s {
                        Set::Deictic(slot) if context.contains(&(*p, *slot)) => Some(*p),
                        _ => None,
                    })
                    .collect();
                let all_deictic = l.pattern.sets.iter().all(|(_, s)| matches!(s, Set::Deictic(_)));
                (!params.is_empty() && all_deictic).then_some((l, params))
            })
            .max_by_key(|(_, p)| p.len());
        if let Some((l, params)) = best {
            lead = l.render.map(str::to_string);
            covered = params;
        }
    }
    let lead = lead.unwrap_or_else(|| match ag.lead_param {
        Some(p) => {
            let r = args.get(p).map(render_value).unwrap_or_else(|| placeholder(p));
            let r = if is_schedule_id(&r) { format!("schedule {r}") } else { r };
            ag.lead.replace("{REF}", &r)
        }
        None => ag.lead.to_string(),
    });
    let mut phrases = Vec::new();
    for p in &spec.params {
        let name = p.name.as_str();
        if covered.contains(&name) || ag.lead_param == Some(name) {
            continue;
        }
        if context.iter().any(|(cp, _)| *cp == name) {
            if let Some(tpl) = ag.deictic.get(name) {
                phrases.push(tpl.to_string());
            }
            continue;
        }
        let Some(v) = args.get(name) else { continue };
        if let Some((yes, no)) = ag.flags.get(name) {
            if let RawValue::Bool(b) = v {
                phrases.push(if *b { yes } else { no }.to_string());
            }
            continue;
        }
        if let Some(tpl) = ag.canonical.get(name) {
            phrases.push(fill(tpl, v));
        }
    }
    if phrases.is_empty() {
        lead
    } else {
        format!("{lead}{}{}", ag.joiner, phrases.join(", "))
    }
}

/// Raw rendering of a typed value for a parameter of `kind`.
pub fn raw_from_value(kind: ValueKind, v: &Value, now: NaiveDateTime) -> RawValue {
    match (kind, v) {
        (ValueKind::Datetime, Value::Text(s)) => match crate::types::parse_datetime(s) {
            Some(dt) => RawValue::Text(timeexpr::render_datetime(dt, now)),
            None => RawValue::Text(s.clone()),
        },
        (ValueKind::DatetimeRange, Value::List(l)) => RawValue::List(
            l.iter()
                .map(|s| crate::types::parse_datetime(s).map_or_else(|| s.clone(), |dt| timeexpr::render_datetime(dt, now)))
                .collect(),
        ),
        (_, Value::Text(s)) => RawValue::Text(s.clone()),
        (_, Value::List(l)) => RawValue::List(l.clone()),
        (_, Value::Int(i)) => RawValue::Int(*i),
        (_, Value::Bool(b)) => RawValue::Bool(*b),
    }
}

/// Raw arguments for a typed call.
pub fn raw_args(api: &str, args: &crate::types::Args, now: NaiveDateTime) -> RawArgs {
    let spec = catalog::tool(api).expect("known tool");
    args.iter().filter_map(|(k, v)| spec.param(k).map(|p| (k.clone(), raw_from_value(p.value_kind, v, now)))).collect()
}

/// Describes a schedule entry the way users refer to it:
/// `3 PM project discussion meeting today`.
pub fn schedule_ref(title: &str, start: NaiveDateTime, is_meeting: bool, now: NaiveDateTime) -> String {
    format!(
        "{} {} {} {}",
        timeexpr::render_time(start.time()),
        title,
        if is_meeting { "meeting" } else { "schedule" },
        timeexpr::render_day(start.date(), now.date())
    )
}

pub fn schedule_ref_of(s: &ScheduleRecord, now: NaiveDateTime) -> String {
    schedule_ref(&s.title, s.start_time, s.is_meeting, now)
}

/// Parsed form of a schedule description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleDescription {
    pub start: NaiveDateTime,
    pub title: String,
    pub is_meeting: bool,
}

pub fn parse_schedule_ref(text: &str, now: NaiveDateTime) -> Option<ScheduleDescription> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)^(?:the )?(\d{1,2}(?::\d{2})? ?[ap]m|noon|midnight) (.+) (meeting|schedule|event) (.+)$").unwrap()
    });
    let c = re.captures(text.trim())?;
    let day = timeexpr::parse_day(&c[4], now.date())?;
    let time = timeexpr::parse_time(&c[1])?;
    Some(ScheduleDescription {
        start: day.and_time(time),
        title: c[2].to_string(),
        is_meeting: c[3].eq_ignore_ascii_case("meeting"),
    })
}

/// Kind of payload each tool returns on success.
pub fn output_kind(api: &str) -> &'static str {
    match api {
        "search_email" => "emails",
        "send_email" => "sent",
        "summary_email" | "summary_chatmsg" | "summary_files" => "summary",
        "create_schedule" | "update_schedule" | "create_meeting" | "find_meetings" => "schedules",
        "find_schedule_status" => "availability",
        "delete_schedule" | "delete_todo" | "withdraw_chatmsg" => "deleted",
        "find_meeting_room" => "rooms",
        "search_chatmsg" => "messages",
        "send_chatmsg" => "message_sent",
        "search_group_chat" | "find_recent_chat_list" => "chats",
        "create_todo" | "find_todo" => "todos",
        "search_files" => "files",
        _ => "none",
    }
}

/// Output kinds able to supply `api.param` from an earlier result.
pub fn evidence_sources(api: &str, param: &str) -> &'static [&'static str] {
    match (api, param) {
        (_, "email_ids") | ("send_email", "forward_email_ids") => &["emails"],
        ("send_email", "body") | ("send_chatmsg", "content") | ("summary_email", "content") => &["summary"],
        (_, "schedule_id") => &["schedules", "availability"],
        ("create_schedule" | "create_meeting", "start_time") => &["availability"],
        (_, "todo_ids") => &["todos"],
        ("summary_chatmsg", "ids") => &["messages", "chats"],
        (_, "message_ids") => &["messages"],
        ("send_chatmsg" | "withdraw_chatmsg" | "search_chatmsg", "chat_id") => &["chats", "summary", "messages", "message_sent"],
        (_, "file_ids") => &["files"],
        ("create_meeting", "room_id") => &["rooms"],
        _ => &[],
    }
}

/// Whether a result of `producer` can fill `api.param`.
pub fn can_fill(api: &str, param: &str, producer: &str) -> bool {
    evidence_sources(api, param).contains(&output_kind(producer))
}

fn payload_kind(p: &Payload) -> &'static str {
    match p {
        Payload::Emails { .. } => "emails",
        Payload::Schedules { .. } => "schedules",
        Payload::Availability { .. } => "availability",
        Payload::Rooms { .. } => "rooms",
        Payload::Messages { .. } => "messages",
        Payload::Chats { .. } => "chats",
        Payload::Todos { .. } => "todos",
        Payload::Files { .. } => "files",
        Payload::Summary { .. } => "summary",
        Payload::Sent { .. } => "sent",
        Payload::MessageSent { .. } => "message_sent",
        Payload::Deleted { .. } => "deleted",
    }
}

/// The typed value a prior result supplies for `api.param`, if any.
pub fn evidence_value(api: &str, param: &str, payload: &Payload) -> Option<Value> {
    if !evidence_sources(api, param).contains(&payload_kind(payload)) {
        return None;
    }
    let kind = catalog::tool(api)?.param(param)?.value_kind;
    let v = match (param, payload) {
        (_, Payload::Summary { text, chat_ids, .. }) => {
            if param == "chat_id" {
                Value::Text(chat_ids.first()?.clone())
            } else {
                Value::Text(text.clone())
            }
        }
        ("start_time", Payload::Availability { free, .. }) => Value::datetime(free.first()?.start),
        ("chat_id", Payload::Messages { records }) => Value::Text(records.first()?.chat_id.clone()),
        ("chat_id", Payload::MessageSent { chat_id, .. }) => Value::Text(chat_id.clone()),
        _ => {
            let ids = payload.ids();
            if ids.is_empty() {
                return None;
            }
            if kind == ValueKind::IdList {
                Value::List(ids)
            } else {
                Value::Text(ids[0].clone())
            }
        }
    };
    Some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn now() -> NaiveDateTime {
        crate::types::parse_datetime("2024-06-04T10:00:00").unwrap()
    }

    fn t(s: &str) -> RawValue {
        RawValue::text(s)
    }

    #[test]
    fn table_queries_parse() {
        let c = parse_clause("Search for the emails I received today").unwrap();
        assert_eq!(c.api, "search_email");
        assert_eq!(c.args["start_time"], t("today"));
        assert_eq!(c.args["end_time"], t("now"));

        let c = parse_clause("Create a meeting at 3 PM today, the topic is project discussion, invite Jiashu Xia").unwrap();
        assert_eq!(c.api, "create_schedule");
        assert_eq!(c.args["start_time"], t("3 PM today"));
        assert_eq!(c.args["title"], t("project discussion"));
        assert_eq!(c.args["participants"], RawValue::List(vec!["Jiashu Xia".into()]));
        assert!(c.unmatched.is_empty());

        let c =
            parse_clause("Send an email to Jiashu Xia, content: Salaries for December have been issued, please check!").unwrap();
        assert_eq!(c.api, "send_email");
        assert_eq!(c.args["body"], t("Salaries for December have been issued, please check!"));

        let c = parse_clause("Move the start time up to 2 PM").unwrap();
        assert_eq!(c.api, "update_schedule");
        assert_eq!(c.args["start_time"], t("2 PM"));
        assert!(!c.args.contains_key("schedule_id"));

        let c = parse_clause("Check Jiashu Xia's free time tomorrow?").unwrap();
        assert_eq!(c.api, "find_schedule_status");
        assert_eq!(c.args["persons"], RawValue::List(vec!["Jiashu Xia".into()]));
        assert_eq!(c.args["start_time"], t("tomorrow"));
        assert_eq!(c.args["end_time"], t("end of tomorrow"));
    }

    #[test]
    fn update_reference_lead() {
        let c = parse_clause("Update the 3 PM project discussion meeting today: change start time to 2 PM").unwrap();
        assert_eq!(c.api, "update_schedule");
        assert_eq!(c.args["schedule_id"], t("3 PM project discussion meeting today"));
        assert_eq!(c.args["start_time"], t("2 PM"));
        let d = parse_schedule_ref("3 PM project discussion meeting today", now()).unwrap();
        assert_eq!(d.title, "project discussion");
        assert!(d.is_meeting);
    }

    #[test]
    fn deictic_forms() {
        let c = parse_clause("Summarize those emails").unwrap();
        assert_eq!(c.api, "summary_email");
        assert_eq!(c.context, vec![("email_ids".to_string(), "email_ids".to_string())]);
        let c = parse_clause("Send the summary as a chat message to that chat, mentioning Wei Zhang").unwrap();
        assert_eq!(c.api, "send_chatmsg");
        assert_eq!(c.context.len(), 2);
        assert_eq!(c.args["mentions"], RawValue::List(vec!["Wei Zhang".into()]));
        let c = parse_clause("Delete those todos").unwrap();
        assert_eq!(c.api, "delete_todo");
        let c = parse_clause("Delete the todos t1 and t2").unwrap();
        assert_eq!(c.args["todo_ids"], RawValue::List(vec!["t1".into(), "t2".into()]));
    }

    #[test]
    fn canonical_round_trip() {
        let mut args = RawArgs::new();
        args.insert("sender".into(), t("Wei Zhang"));
        args.insert("subject_keywords".into(), t("budget, draft"));
        args.insert("has_attachment".into(), RawValue::Bool(false));
        args.insert("folder".into(), t("inbox"));
        args.insert("start_time".into(), t("9 AM yesterday"));
        args.insert("limit".into(), RawValue::Int(3));
        let text = render_clause("search_email", &args);
        assert_eq!(
            text,
            "Search for the emails from Wei Zhang, with subject containing \"budget, draft\", in the inbox folder, \
             without attachments, received after 9 AM yesterday, limited to 3 results"
        );
        let c = parse_clause(&text).unwrap();
        assert_eq!(c.args, args);
        assert!(c.unmatched.is_empty());
    }

    #[test]
    fn deictic_render_round_trip() {
        let mut args = RawArgs::new();
        args.insert("to".into(), RawValue::List(vec!["Tom Li".into(), "Mei Wang".into()]));
        args.insert("subject".into(), t("notes"));
        let text = render_with_context("send_email", &args, &[("body", "summary")]);
        assert_eq!(text, "Send the summary by email to Tom Li and Mei Wang, with subject \"notes\"");
        let c = parse_clause(&text).unwrap();
        assert_eq!(c.args, args);
        assert_eq!(c.context_slot("body"), Some("summary"));
    }

    #[test]
    fn clause_splitting_respects_quotes() {
        let parts = split_clauses("Create a todo titled \"a and then b\" and then Find the todos, then Delete those todos");
        assert_eq!(parts.len(), 3);
        assert_eq!(parts[0], "Create a todo titled \"a and then b\"");
    }

    #[test]
    fn schedule_id_refs() {
        let mut args = RawArgs::new();
        args.insert("schedule_id".into(), t("#E1"));
        let text = render_clause("delete_schedule", &args);
        assert_eq!(text, "Delete the schedule #E1");
        assert_eq!(parse_clause(&text).unwrap().args, args);
        args.insert("schedule_id".into(), t("s3"));
        args.insert("title".into(), t("sync"));
        let text = render_clause("update_schedule", &args);
        assert_eq!(text, "Update the schedule s3: change title to \"sync\"");
        assert_eq!(parse_clause(&text).unwrap().args, args);
        assert_eq!(parse_clause("Delete all meetings #E2").unwrap().args["schedule_id"], t("#E2"));
    }

    #[test]
    fn range_param() {
        let mut args = RawArgs::new();
        args.insert("time_range".into(), RawValue::List(vec!["9 AM yesterday".into(), "10 AM".into()]));
        let text = render_clause("find_recent_chat_list", &args);
        assert_eq!(text, "Show the recent chats between 9 AM yesterday and 10 AM");
        assert_eq!(parse_clause(&text).unwrap().args, args);
    }

    #[test]
    fn skeleton_drops_values() {
        let c = parse_clause("Create a meeting at 3 PM today, the topic is project discussion, invite Jiashu Xia").unwrap();
        assert_eq!(c.skeleton, "Create a meeting at the topic is invite");
    }

    #[test]
    fn unknown_lead_is_none() {
        assert!(parse_clause("hello there").is_none());
        assert!(parse_clause("Look up the emails from Wei Zhang").is_none());
    }
}
