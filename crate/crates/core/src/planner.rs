//! Decomposition of a rewritten query into sub-tasks, and the plan text
//! format.
//!
//! Plan text has one line per sub-task:
//!
//! ```text
//! #E1 = search_email[Search for the emails I received today]
//! #E2 = summary_email[summarize those emails] after #E1
//! ```
//!
//! The `after` list carries dependencies that the clause does not spell out
//! with an evidence token.

use std::sync::OnceLock;

use regex::Regex;

use crate::catalog;
use crate::error::{Error, Result};
use crate::grammar::{self, RawArgs, RawValue};
use crate::rewrite;
use crate::types::{evidence_id, Plan, SessionMemory, SubTask, NO_API};

pub trait PlannerBackend: Send + Sync {
    fn name(&self) -> &str;
    fn plan(&self, rewritten: &str, candidates: &[String], memory: &SessionMemory) -> Plan;

    fn plan_noted(&self, rewritten: &str, candidates: &[String], memory: &SessionMemory) -> (Plan, Vec<String>) {
        (self.plan(rewritten, candidates, memory), Vec::new())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RulePlanner;

impl PlannerBackend for RulePlanner {
    fn name(&self) -> &str {
        "reference"
    }

    fn plan(&self, rewritten: &str, candidates: &[String], memory: &SessionMemory) -> Plan {
        plan(rewritten, candidates, memory)
    }
}

fn delete_all_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?i:(?:delete|cancel) all (?:the |my )?meetings) (.+)$").unwrap())
}

fn update_meeting_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?i:update the meeting) (.+?), (.+)$").unwrap())
}

/// "Find the meetings <desc>" parsed with nothing left over.
fn meeting_description(desc: &str) -> Option<RawArgs> {
    let parsed = grammar::parse_clause(&format!("Find the meetings {desc}"))?;
    (parsed.api == "find_meetings" && parsed.unmatched.is_empty() && !parsed.args.is_empty()).then_some(parsed.args)
}

fn clean_parse(clause: &str) -> bool {
    grammar::parse_clause(clause).is_some_and(|p| p.unmatched.is_empty())
}

/// Clauses that need a lookup first: (text, api) pairs where `{E}` in the
/// second text stands for the first's evidence id.
fn expand(clause: &str) -> Option<[(String, &'static str); 2]> {
    if clean_parse(clause) {
        return None;
    }
    if let Some((verb, desc, to)) = rewrite::email_description(clause) {
        let search = (format!("Search for the emails {desc}"), "search_email");
        return Some(match (verb.as_str(), to) {
            ("forward", Some(to)) => [search, (format!("Forward the emails {{E}} to {to}"), "send_email")],
            _ => [search, ("Summarize the emails {E}".to_string(), "summary_email")],
        });
    }
    if let Some(c) = delete_all_re().captures(clause.trim()) {
        meeting_description(&c[1])?;
        return Some([
            (format!("Find the meetings {}", &c[1]), "find_meetings"),
            ("Delete all meetings {E}".to_string(), "delete_schedule"),
        ]);
    }
    if let Some(c) = update_meeting_re().captures(clause.trim()) {
        meeting_description(&c[1])?;
        let update = format!("Update the meeting {{E}}: {}", &c[2]);
        if !clean_parse(&update.replace("{E}", "#E1")) {
            return None;
        }
        return Some([(format!("Find the meetings {}", &c[1]), "find_meetings"), (update, "update_schedule")]);
    }
    None
}

/// Plans with the reference backend.
pub fn plan(rewritten: &str, candidates: &[String], _memory: &SessionMemory) -> Plan {
    let mut items: Vec<(String, String)> = Vec::new();
    for clause in grammar::split_clauses(rewritten) {
        if let Some(pair) = expand(&clause) {
            let first = evidence_id(items.len() + 1);
            for (text, api) in pair {
                items.push((text.replace("{E}", &first), api.to_string()));
            }
            continue;
        }
        let api = grammar::parse_clause(&clause).map_or(NO_API.to_string(), |p| p.api);
        items.push((clause, api));
    }
    if items.is_empty() {
        items.push((rewritten.trim().to_string(), NO_API.to_string()));
    }
    let mut sub_tasks: Vec<SubTask> = Vec::new();
    for (i, (text, api)) in items.into_iter().enumerate() {
        let api = if api == NO_API || candidates.contains(&api) { api } else { NO_API.to_string() };
        let mut st = SubTask::new(i + 1, text, api);
        st.depends_on = dependencies(&st, &sub_tasks);
        sub_tasks.push(st);
    }
    Plan { sub_tasks }
}

/// Evidence ids a sub-task needs: explicit `#Ek` tokens, plus for each
/// deictic or missing required parameter the nearest earlier sub-task able
/// to supply it.
fn dependencies(st: &SubTask, earlier: &[SubTask]) -> Vec<String> {
    let mut deps: Vec<usize> = Vec::new();
    let Some(parsed) = grammar::parse_clause(&st.text).filter(|p| p.api == st.api_name) else {
        return Vec::new();
    };
    for v in parsed.args.values() {
        for r in v.evidence_refs() {
            if let Ok(k) = r[2..].parse::<usize>() {
                if k < st.index {
                    deps.push(k);
                }
            }
        }
    }
    let spec = catalog::tool(&st.api_name).expect("parsed apis are cataloged");
    let implicit = spec.params.iter().filter(|p| match parsed.args.get(&p.name) {
        None => p.required || parsed.context_slot(&p.name).is_some(),
        Some(_) => false,
    });
    for p in implicit {
        if let Some(prev) = earlier.iter().rev().find(|e| grammar::can_fill(&st.api_name, &p.name, &e.api_name)) {
            deps.push(prev.index);
        }
    }
    deps.sort_unstable();
    deps.dedup();
    deps.into_iter().map(evidence_id).collect()
}

/// Renders a plan as `#Ek = api[clause]` lines.
pub fn plan_text_format(plan: &Plan) -> String {
    let mut out = String::new();
    for st in &plan.sub_tasks {
        out.push_str(&format!("{} = {}[{}]", st.evidence_id, st.api_name, st.text));
        if !st.depends_on.is_empty() && st.depends_on != evidence_tokens(&st.text) {
            out.push_str(&format!(" after {}", st.depends_on.join(", ")));
        }
        out.push('\n');
    }
    out
}

fn evidence_tokens(text: &str) -> Vec<String> {
    let mut v: Vec<String> = RawValue::Text(text.to_string()).evidence_refs();
    v.sort_by_key(|e| e[2..].parse::<usize>().unwrap_or(0));
    v.dedup();
    v
}

fn line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^#E(\d+)\s*=\s*([A-Za-z_][A-Za-z0-9_]*)\[(.*)\](?:\s+after\s+(#E\d+(?:\s*,\s*#E\d+)*))?\s*$").unwrap()
    })
}

/// Parses plan text. Blank lines and `Plan:` reasoning lines are skipped.
/// Without an `after` list, dependencies are the evidence tokens in the
/// clause.
pub fn parse_plan(text: &str) -> Result<Plan> {
    let mut sub_tasks: Vec<SubTask> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        let loc = format!("line {}", n + 1);
        if line.is_empty() || line.starts_with("Plan:") {
            continue;
        }
        let c =
            line_re().captures(line).ok_or_else(|| Error::parse(&loc, format!("expected `#Ek = api[clause]`, got {line:?}")))?;
        let k: usize = c[1].parse().map_err(|_| Error::parse(&loc, "bad evidence index"))?;
        if k != sub_tasks.len() + 1 {
            return Err(Error::parse(&loc, format!("expected #E{} but found #E{k}", sub_tasks.len() + 1)));
        }
        let mut st = SubTask::new(k, &c[3], &c[2]);
        st.depends_on = match c.get(4) {
            Some(list) => list.as_str().split(',').map(|s| s.trim().to_string()).collect(),
            None => evidence_tokens(&c[3]),
        };
        for d in &st.depends_on {
            let j: usize = d[2..].parse().map_err(|_| Error::parse(&loc, "bad dependency"))?;
            if j == 0 || j >= k {
                return Err(Error::parse(&loc, format!("{d} is not an earlier sub-task")));
            }
        }
        sub_tasks.push(st);
    }
    Ok(Plan { sub_tasks })
}

/// Rejects plans naming tools outside the candidates by replacing them with
/// "none", as the model backend must never call an unoffered tool.
pub fn restrict_to_candidates(mut plan: Plan, candidates: &[String]) -> Plan {
    for st in &mut plan.sub_tasks {
        if st.api_name != NO_API && !candidates.contains(&st.api_name) {
            st.api_name = NO_API.to_string();
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all() -> Vec<String> {
        catalog::tool_names().into_iter().map(String::from).collect()
    }

    fn apis(p: &Plan) -> Vec<(&str, Vec<&str>)> {
        p.sub_tasks.iter().map(|s| (s.api_name.as_str(), s.depends_on.iter().map(String::as_str).collect())).collect()
    }

    #[test]
    fn summarize_expands_to_search_then_summary() {
        let p = plan("Summarize the emails I received today", &all(), &SessionMemory::default());
        assert_eq!(apis(&p), vec![("search_email", vec![]), ("summary_email", vec!["#E1"])]);
        assert_eq!(p.sub_tasks[0].text, "Search for the emails I received today");
    }

    #[test]
    fn free_time_then_booking() {
        let p = plan("Check Jiashu Xia's free time tomorrow, then book a meeting", &all(), &SessionMemory::default());
        assert_eq!(apis(&p), vec![("find_schedule_status", vec![]), ("create_schedule", vec!["#E1"])]);
    }

    #[test]
    fn chitchat_is_none() {
        let p = plan("hello", &all(), &SessionMemory::default());
        assert_eq!(apis(&p), vec![(NO_API, vec![])]);
        assert_eq!(p.sub_tasks[0].evidence_id, "#E1");
    }

    #[test]
    fn outside_candidates_is_none() {
        let p = plan("Find the todos", &["search_email".to_string()], &SessionMemory::default());
        assert_eq!(p.sub_tasks[0].api_name, NO_API);
    }

    #[test]
    fn meeting_lookups() {
        let p = plan("Delete all meetings at 3 PM today", &all(), &SessionMemory::default());
        assert_eq!(apis(&p), vec![("find_meetings", vec![]), ("delete_schedule", vec!["#E1"])]);
        let p =
            plan("Update the meeting at 3 PM today, change the topic to product discussion", &all(), &SessionMemory::default());
        assert_eq!(apis(&p), vec![("find_meetings", vec![]), ("update_schedule", vec!["#E1"])]);
    }

    #[test]
    fn text_round_trip() {
        let p = plan(
            "Search for the emails from Tom Li and then summarize those emails and then Send the summary by email to Wei Zhang, with subject \"digest\"",
            &all(),
            &SessionMemory::default(),
        );
        assert_eq!(apis(&p).len(), 3);
        assert_eq!(p.sub_tasks[2].depends_on, vec!["#E2"]);
        let text = plan_text_format(&p);
        assert_eq!(parse_plan(&text).unwrap(), p);
    }

    #[test]
    fn parse_errors() {
        let p = parse_plan("#E1 = search_email[emails received today]").unwrap();
        assert_eq!(p.sub_tasks.len(), 1);
        let err = parse_plan("#E2 = search_email[x]\n#E1 = summary_email[y]").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = parse_plan("#E1 = search_email[x]\nnot a plan").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_plan("#E1 = a[x] after #E1").is_err());
    }
}
