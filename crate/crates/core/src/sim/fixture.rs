//! Named seed datasets for the simulator.

use std::sync::OnceLock;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::*;

pub const F1_TOML: &str = include_str!("../../data/fixtures/f1.toml");

/// Contents of a fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    pub name: String,
    pub epoch: NaiveDateTime,
    /// The signed-in user: sender of outgoing mail, organizer of new entries.
    pub owner: String,
    #[serde(default)]
    pub people: Vec<String>,
    #[serde(default)]
    pub emails: Vec<EmailRecord>,
    #[serde(default)]
    pub schedules: Vec<ScheduleRecord>,
    #[serde(default)]
    pub rooms: Vec<MeetingRoom>,
    #[serde(default)]
    pub chats: Vec<GroupChat>,
    #[serde(default)]
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub todos: Vec<TodoItem>,
    #[serde(default)]
    pub files: Vec<CloudFile>,
}

impl Fixture {
    pub fn parse(text: &str) -> Result<Fixture> {
        let f: Fixture = toml::from_str(text).map_err(|e| {
            let loc = e.span().map_or_else(|| "fixture".to_string(), |s| format!("fixture byte {}", s.start));
            Error::parse(loc, e.message().to_string())
        })?;
        f.check()?;
        Ok(f)
    }

    fn check(&self) -> Result<()> {
        fn unique<'a>(kind: &str, ids: impl Iterator<Item = &'a String>) -> Result<()> {
            let mut seen = std::collections::BTreeSet::new();
            for id in ids {
                if !seen.insert(id) {
                    return Err(Error::Integrity(format!("duplicate {kind} id {id}")));
                }
            }
            Ok(())
        }
        unique("email", self.emails.iter().map(|r| &r.id))?;
        unique("schedule", self.schedules.iter().map(|r| &r.id))?;
        unique("room", self.rooms.iter().map(|r| &r.id))?;
        unique("chat", self.chats.iter().map(|r| &r.id))?;
        unique("message", self.messages.iter().map(|r| &r.id))?;
        unique("todo", self.todos.iter().map(|r| &r.id))?;
        unique("file", self.files.iter().map(|r| &r.id))?;
        if let Some(s) = self.schedules.iter().find(|s| s.start_time >= s.end_time) {
            return Err(Error::Integrity(format!("schedule {} does not end after it starts", s.id)));
        }
        if let Some(t) = self.todos.iter().find(|t| t.status != "open" && t.status != "done") {
            return Err(Error::Integrity(format!("todo {} has status {}", t.id, t.status)));
        }
        Ok(())
    }

    /// The same owner, people and epoch as F1 with every store empty.
    pub fn empty() -> Fixture {
        let f1 = f1();
        Fixture {
            name: "empty".into(),
            epoch: f1.epoch,
            owner: f1.owner.clone(),
            people: f1.people.clone(),
            emails: vec![],
            schedules: vec![],
            rooms: vec![],
            chats: vec![],
            messages: vec![],
            todos: vec![],
            files: vec![],
        }
    }
}

pub fn f1() -> &'static Fixture {
    static F1: OnceLock<Fixture> = OnceLock::new();
    F1.get_or_init(|| Fixture::parse(F1_TOML).expect("fixture F1 is valid"))
}

pub const FIXTURE_NAMES: [&str; 2] = ["F1", "empty"];

pub fn named(name: &str) -> Result<Fixture> {
    match name {
        "F1" | "f1" => Ok(f1().clone()),
        "empty" => Ok(Fixture::empty()),
        other => Err(Error::UnknownFixture(other.to_string())),
    }
}
