//! Synthetic dialogue generation.
//!
//! Every sample is built against a fresh F1 simulator: argument values are
//! drawn from the stores, each gold call is executed, and later clauses
//! take their context values from the earlier results. Gold rewrites, plans
//! and calls are derived here from the payloads and the shared grammar,
//! without running any backend.
//!
//! Sample kinds:
//!
//! * `transition`: two turns over one listed tool transition, with the
//!   parameter subsets fixed by a combination of that rule.
//! * `single`: one literal clause.
//! * `multi`: one turn of several clauses, optionally chained through
//!   evidence.
//! * `none`: an office question no tool answers.
//! * `chitchat`: small talk.

pub mod annotation;
pub mod noise;
pub mod values;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::NaiveDateTime;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::error::{Error, Result};
use crate::grammar::{self, RawArgs, RawValue};
use crate::records::ScheduleRecord;
use crate::sim::{fixture, OfficeSim};
use crate::solver::typed_args;
use crate::timeexpr;
use crate::transitions::{self, Combination, TransitionRule};
use crate::types::{Args, Payload, Plan, Scenario, SubTask, ToolCall, ToolResult, Value, WorkerLabel, NO_API};

/// Transition samples per rule before the generator moves to the next one.
pub const RULE_QUOTA: u64 = 500;

/// Redraws allowed per sample before generation gives up on it.
pub const MAX_ATTEMPTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Transition,
    Single,
    Multi,
    #[serde(rename = "none")]
    NoTool,
    Chitchat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleTurn {
    pub user_text: String,
    pub gold_related: bool,
    pub gold_rewritten: String,
    pub gold_intent: WorkerLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_plan: Option<Plan>,
    #[serde(default)]
    pub gold_calls: Vec<ToolCall>,
    #[serde(default)]
    pub sim_results: Vec<ToolResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSample {
    pub id: String,
    pub kind: SampleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    /// Gold apis in call order across all turns.
    #[serde(default)]
    pub transition_path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combination: Option<Combination>,
    /// Perturbations applied to the user text, as `turn<k>:<kind>`.
    #[serde(default)]
    pub noise: Vec<String>,
    pub seed: u64,
    pub turns: Vec<SampleTurn>,
}

impl DialogueSample {
    /// `prev->cur` for transition samples.
    pub fn rule_key(&self) -> Option<String> {
        match (self.kind, self.transition_path.as_slice()) {
            (SampleKind::Transition, [a, b, ..]) => Some(format!("{a}->{b}")),
            _ => None,
        }
    }
}

/// What a generation run produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Flow {
    /// The standard mix of all kinds.
    Full,
    /// Transition samples over every listed rule.
    Transitions,
    /// Transition samples over the rules of one scenario.
    Scenario(Scenario),
    Single,
    Multi,
    /// Transition samples of one rule.
    Rule(String, String),
}

impl FromStr for Flow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Flow> {
        let s = s.trim();
        Ok(match s.to_lowercase().as_str() {
            "full" => Flow::Full,
            "transitions" => Flow::Transitions,
            "single" => Flow::Single,
            "multi" => Flow::Multi,
            "email" => Flow::Scenario(Scenario::Email),
            "schedule" => Flow::Scenario(Scenario::Schedule),
            "todo" => Flow::Scenario(Scenario::Todo),
            "chat" => Flow::Scenario(Scenario::Chat),
            _ => {
                let rule = s.strip_prefix("transition:").and_then(|r| r.split_once("->"));
                let Some((prev, cur)) = rule else {
                    return Err(Error::Usage(format!(
                        "unknown flow {s:?}; expected full, transitions, email, schedule, todo, chat, single, multi or transition:<prev>-><cur>"
                    )));
                };
                let (prev, cur) = (prev.trim(), cur.trim());
                if transitions::rule(prev, cur).is_none() {
                    return Err(Error::Usage(format!("transition {prev} -> {cur} is not a listed rule")));
                }
                Flow::Rule(prev.to_string(), cur.to_string())
            }
        })
    }
}

impl std::fmt::Display for Flow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Flow::Full => write!(f, "full"),
            Flow::Transitions => write!(f, "transitions"),
            Flow::Scenario(s) => write!(f, "{}", format!("{s:?}").to_lowercase()),
            Flow::Single => write!(f, "single"),
            Flow::Multi => write!(f, "multi"),
            Flow::Rule(p, c) => write!(f, "transition:{p}->{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatagenConfig {
    pub flow: Flow,
    pub count: usize,
    pub seed: u64,
    /// Probability that a turn's user text is perturbed.
    pub noise: f64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig { flow: Flow::Full, count: 500, seed: 1, noise: 0.0 }
    }
}

/// The unit of work behind one sample.
#[derive(Debug, Clone, Copy)]
enum Task {
    Transition(&'static TransitionRule, Combination),
    Single,
    Multi,
    NoTool,
    Chitchat,
}

impl Task {
    fn describe(&self) -> String {
        match self {
            Task::Transition(r, c) => {
                format!("transition {} -> {} with masks {:#b}/{:#b}", r.prev_api, r.cur_api, c.prev_mask, c.cur_mask)
            }
            Task::Single => "single".into(),
            Task::Multi => "multi".into(),
            Task::NoTool => "none".into(),
            Task::Chitchat => "chitchat".into(),
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// A step coprime to `n`, so `j -> (step * j + offset) mod n` visits every
/// combination once per `n` samples.
fn coprime_step(n: u64) -> u64 {
    let mut a = ((n as f64) * 0.618).round().max(1.0) as u64;
    while gcd(a, n) != 1 {
        a += 1;
    }
    a
}

/// The `j`-th combination drawn for `rule` in a run seeded with `seed`.
pub fn combination_for(rule: &TransitionRule, j: u64, seed: u64) -> Combination {
    let n = rule.combinations;
    let idx = (coprime_step(n) * (j % n) + seed % n) % n;
    transitions::unrank(rule, idx).expect("index below the combination count")
}

/// Per-rule quota: `min(RULE_QUOTA, combinations)`.
pub fn quota(rule: &TransitionRule) -> u64 {
    rule.combinations.min(RULE_QUOTA)
}

/// The `t`-th transition task over `rules`, in blocks of each rule's quota.
fn transition_task(rules: &[&'static TransitionRule], t: u64, seed: u64, full_count: bool) -> Task {
    let quotas: Vec<u64> = rules.iter().map(|r| if full_count { r.combinations } else { quota(r) }).collect();
    let total: u64 = quotas.iter().sum();
    let mut t = t % total;
    for (r, q) in rules.iter().zip(quotas) {
        if t < q {
            return Task::Transition(r, combination_for(r, t, seed));
        }
        t -= q;
    }
    unreachable!("t is below the total quota")
}

fn task(cfg: &DatagenConfig, i: u64) -> Task {
    let all: Vec<&'static TransitionRule> = transitions::ledger().iter().collect();
    match &cfg.flow {
        Flow::Full => match i % 20 {
            slot @ 0..=9 => transition_task(&all, i / 20 * 10 + slot, cfg.seed, false),
            10..=13 => Task::Single,
            14..=16 => Task::Multi,
            17..=18 => Task::NoTool,
            _ => Task::Chitchat,
        },
        Flow::Transitions => transition_task(&all, i, cfg.seed, false),
        Flow::Scenario(s) => {
            let rules: Vec<_> = all.into_iter().filter(|r| r.scenario == *s).collect();
            transition_task(&rules, i, cfg.seed, false)
        }
        Flow::Rule(p, c) => {
            let r = transitions::rule(p, c).expect("flow parsing checked the rule");
            transition_task(&[r], i, cfg.seed, true)
        }
        Flow::Single => Task::Single,
        Flow::Multi => Task::Multi,
    }
}

/// Generates `cfg.count` samples. The result depends only on `cfg`.
pub fn generate(cfg: &DatagenConfig) -> Result<Vec<DialogueSample>> {
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(Error::Usage(format!("noise rate {} is outside [0, 1]", cfg.noise)));
    }
    if let Flow::Scenario(s) = &cfg.flow {
        if !transitions::ledger().iter().any(|r| r.scenario == *s) {
            return Err(Error::Usage(format!("no listed transitions for scenario {s:?}")));
        }
    }
    (0..cfg.count as u64).into_par_iter().map(|i| generate_one(cfg, i)).collect()
}

/// Sample `i` of the run described by `cfg`.
pub fn generate_one(cfg: &DatagenConfig, i: u64) -> Result<DialogueSample> {
    let task = task(cfg, i);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i);
    let mut built = None;
    for _ in 0..MAX_ATTEMPTS {
        let sim = OfficeSim::named("F1", 0)?;
        if let Some(s) = build(task, &sim, &mut rng) {
            built = Some(s);
            break;
        }
    }
    let Some((kind, turns)) = built else {
        return Err(Error::Datagen(format!("sample {i}: {} has no valid draw in {MAX_ATTEMPTS} attempts", task.describe())));
    };
    let scenario = match task {
        Task::Transition(r, _) => Some(r.scenario),
        _ => turns.iter().flat_map(|t| &t.gold_calls).next().and_then(|c| catalog::tool(&c.api_name)).map(|t| t.scenario),
    };
    let mut sample = DialogueSample {
        id: format!("dlg-{}-{i:05}", cfg.seed),
        kind,
        scenario,
        transition_path: turns.iter().flat_map(|t| t.gold_calls.iter().map(|c| c.api_name.clone())).collect(),
        combination: match task {
            Task::Transition(_, c) => Some(c),
            _ => None,
        },
        noise: vec![],
        seed: cfg.seed,
        turns,
    };
    if cfg.noise > 0.0 {
        let mut nrng = ChaCha8Rng::seed_from_u64(cfg.seed ^ noise::NOISE_SALT);
        nrng.set_stream(i);
        noise::perturb(&mut sample, cfg.noise, &mut nrng);
    }
    Ok(sample)
}

/// Read-only view of the simulator the draws need.
struct World<'a> {
    sim: &'a OfficeSim,
    people: &'a [String],
    owner: String,
    now: NaiveDateTime,
}

impl World<'_> {
    fn draw(&self, api: &str, params: &[&str], rng: &mut ChaCha8Rng) -> Option<Args> {
        values::sample_args(api, params, rng, &self.sim.stores(), self.people, &self.owner, self.now)
    }
}

fn build(task: Task, sim: &OfficeSim, rng: &mut ChaCha8Rng) -> Option<(SampleKind, Vec<SampleTurn>)> {
    let world = World { sim, people: &fixture::f1().people, owner: sim.owner(), now: sim.now() };
    match task {
        Task::Transition(rule, combo) => transition_sample(&world, rule, combo, rng).map(|t| (SampleKind::Transition, t)),
        Task::Single => single_sample(&world, rng).map(|t| (SampleKind::Single, vec![t])),
        Task::Multi => multi_sample(&world, rng).map(|t| (SampleKind::Multi, vec![t])),
        Task::NoTool => Some((SampleKind::NoTool, vec![no_tool_turn(rng)])),
        Task::Chitchat => Some((SampleKind::Chitchat, vec![chitchat_turn(rng)])),
    }
}

/// Parameters of a mask plus every required one, in catalog order.
fn with_required(api: &str, picked: &[&str]) -> Vec<&'static str> {
    let spec = catalog::tool(api).expect("cataloged");
    spec.params.iter().filter(|p| p.required || picked.contains(&p.name.as_str())).map(|p| p.name.as_str()).collect()
}

/// A random non-empty parameter subset of `api`, plus required ones.
fn random_params(api: &str, rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    let n = catalog::tool(api).expect("cataloged").params.len() as u32;
    let mask = rng.random_range(1..(1u64 << n));
    with_required(api, &transitions::mask_params(api, mask))
}

/// A context parameter of the current clause: the grammar slot its deictic
/// form names, its value as the rewrite spells it out, and its typed value.
struct ContextValue {
    param: &'static str,
    slot: &'static str,
    raw: RawValue,
    typed: Value,
    /// The schedule it refers to, for schedule references.
    schedule: Option<ScheduleRecord>,
}

/// Whether a `prev` result stands in for `cur.param` in a follow-up.
pub fn context_capable(cur: &str, param: &str, prev: &str) -> bool {
    let kind = grammar::output_kind(prev);
    match (cur, param) {
        ("summary_email", "email_ids") => kind == "emails",
        ("send_email", "body") | ("send_chatmsg", "content") => kind == "summary",
        ("update_schedule" | "delete_schedule", "schedule_id") => kind == "schedules" || kind == "availability",
        ("create_schedule", "start_time") => kind == "availability",
        ("delete_todo", "todo_ids") => kind == "todos",
        ("summary_chatmsg", "ids") => kind == "messages" || kind == "chats",
        ("send_chatmsg", "chat_id") => kind == "summary" || kind == "chats" || kind == "messages",
        ("withdraw_chatmsg", "message_ids") => kind == "messages",
        ("summary_files", "file_ids") => kind == "files",
        _ => false,
    }
}

fn non_empty(ids: Vec<String>) -> Option<Vec<String>> {
    (!ids.is_empty()).then_some(ids)
}

/// The value `payload` supplies for a context-capable `cur.param`.
fn context_value(cur: &str, param: &'static str, payload: &Payload, now: NaiveDateTime) -> Option<ContextValue> {
    let list = |slot: &'static str, ids: Vec<String>| {
        let ids = non_empty(ids)?;
        Some(ContextValue { param, slot, raw: RawValue::List(ids.clone()), typed: Value::List(ids), schedule: None })
    };
    let text = |slot: &'static str, s: String| ContextValue {
        param,
        slot,
        raw: RawValue::Text(s.clone()),
        typed: Value::Text(s),
        schedule: None,
    };
    match (cur, param, payload) {
        ("summary_email", "email_ids", Payload::Emails { .. }) => list("email_ids", payload.ids()),
        ("send_email", "body", Payload::Summary { text: t, .. })
        | ("send_chatmsg", "content", Payload::Summary { text: t, .. }) => Some(text("summary", t.clone())),
        (_, "schedule_id", Payload::Schedules { records: r } | Payload::Availability { busy: r, .. }) => {
            let rec = r.first()?;
            Some(ContextValue {
                param,
                slot: "schedule_id",
                raw: RawValue::Text(grammar::schedule_ref_of(rec, now)),
                typed: Value::text(&rec.id),
                schedule: Some(rec.clone()),
            })
        }
        ("create_schedule", "start_time", Payload::Availability { free, .. }) => {
            let start = free.first()?.start;
            Some(ContextValue {
                param,
                slot: "free_start",
                raw: RawValue::Text(timeexpr::render_datetime(start, now)),
                typed: Value::datetime(start),
                schedule: None,
            })
        }
        ("delete_todo", "todo_ids", Payload::Todos { .. }) => list("todo_ids", payload.ids()),
        ("summary_chatmsg", "ids", Payload::Messages { .. }) => list("message_ids", payload.ids()),
        ("summary_chatmsg", "ids", Payload::Chats { .. }) => list("chat_ids", payload.ids()),
        ("send_chatmsg", "chat_id", Payload::Summary { chat_ids, .. }) => Some(text("chat_id", chat_ids.first()?.clone())),
        ("send_chatmsg", "chat_id", Payload::Chats { records }) => Some(text("chat_id", records.first()?.id.clone())),
        ("send_chatmsg", "chat_id", Payload::Messages { records }) => Some(text("chat_id", records.first()?.chat_id.clone())),
        ("withdraw_chatmsg", "message_ids", Payload::Messages { .. }) => list("message_ids", payload.ids()),
        ("summary_files", "file_ids", Payload::Files { .. }) => list("file_ids", payload.ids()),
        _ => None,
    }
}

/// A rendered clause with its gold call.
struct Clause {
    text: String,
    api: String,
    call: ToolCall,
    /// Raw arguments with context values spelled out.
    resolved: RawArgs,
    context: Vec<ContextValue>,
}

/// Renders `args` as a literal clause, keeping it only if the grammar reads
/// back exactly the same arguments.
fn literal_clause(api: &str, args: Args, now: NaiveDateTime) -> Option<Clause> {
    let raw = grammar::raw_args(api, &args, now);
    let text = grammar::render_clause(api, &raw);
    let parsed = grammar::parse_clause(&text)?;
    let typed = typed_args(api, &raw, now)?;
    if parsed.api != api || parsed.args != raw || !parsed.unmatched.is_empty() || parsed.is_deictic() || typed != args {
        return None;
    }
    Some(Clause {
        text,
        api: api.to_string(),
        call: ToolCall { api_name: api.to_string(), args },
        resolved: raw,
        context: vec![],
    })
}

/// A follow-up clause for `api` whose context parameters come from `prev`.
fn follow_up_clause(
    world: &World,
    api: &str,
    params: &[&'static str],
    prev: &ToolCall,
    prev_result: &ToolResult,
    rng: &mut ChaCha8Rng,
) -> Option<Clause> {
    let payload = prev_result.payload.as_ref()?;
    let mut context = Vec::new();
    let mut literal = Vec::new();
    for p in params {
        if context_capable(api, p, &prev.api_name) {
            context.push(context_value(api, p, payload, world.now)?);
        } else {
            literal.push(*p);
        }
    }
    let mut args = if literal.is_empty() { Args::new() } else { world.draw(api, &literal, rng)? };
    // Withdrawing found messages names the chat they were found in.
    if let (Payload::Messages { records }, true) = (payload, api == "withdraw_chatmsg" && args.contains_key("chat_id")) {
        args.insert("chat_id".into(), Value::text(&records.first()?.chat_id));
    }
    if let Some(rec) = context.iter().find_map(|c| c.schedule.as_ref()) {
        values::fix_update_end(&mut args, rec.start_time, rng);
    }
    if let Some(start) = context.iter().find(|c| c.param == "start_time").and_then(|c| c.typed.as_datetime()) {
        if args.contains_key("end_time") {
            args.insert("end_time".into(), values::end_after(start, rng));
        }
    }
    let raw = grammar::raw_args(api, &args, world.now);
    let pairs: Vec<(&str, &str)> = context.iter().map(|c| (c.param, c.slot)).collect();
    let text = grammar::render_with_context(api, &raw, &pairs);
    let parsed = grammar::parse_clause(&text)?;
    let mut got: Vec<(&str, &str)> = parsed.context.iter().map(|(p, s)| (p.as_str(), s.as_str())).collect();
    let mut want = pairs.clone();
    got.sort_unstable();
    want.sort_unstable();
    if parsed.api != api || parsed.args != raw || !parsed.unmatched.is_empty() || got != want {
        return None;
    }
    if typed_args(api, &raw, world.now)? != args {
        return None;
    }
    let mut resolved = raw;
    for c in &context {
        resolved.insert(c.param.to_string(), c.raw.clone());
        args.insert(c.param.to_string(), c.typed.clone());
    }
    Some(Clause { text, api: api.to_string(), call: ToolCall { api_name: api.to_string(), args }, resolved, context })
}

fn execute_ok(world: &World, call: &ToolCall) -> Option<ToolResult> {
    let r = world.sim.execute(call);
    r.is_ok().then_some(r)
}

fn turn(user_text: String, related: bool, rewritten: String, plan: Plan, clauses: Vec<(Clause, ToolResult)>) -> SampleTurn {
    let (calls, results) = clauses.into_iter().map(|(c, r)| (c.call, r)).unzip();
    SampleTurn {
        user_text,
        gold_related: related,
        gold_rewritten: rewritten,
        gold_intent: WorkerLabel::Wps365,
        gold_plan: Some(plan),
        gold_calls: calls,
        sim_results: results,
    }
}

fn single_plan(text: &str, api: &str) -> Plan {
    Plan { sub_tasks: vec![SubTask::new(1, text, api)] }
}

fn transition_sample(world: &World, rule: &TransitionRule, combo: Combination, rng: &mut ChaCha8Rng) -> Option<Vec<SampleTurn>> {
    let prev_params = with_required(&rule.prev_api, &combo.prev_params(rule));
    let first = literal_clause(&rule.prev_api, world.draw(&rule.prev_api, &prev_params, rng)?, world.now)?;
    let first_result = execute_ok(world, &first.call)?;
    let cur_params = with_required(&rule.cur_api, &combo.cur_params(rule));
    let second = follow_up_clause(world, &rule.cur_api, &cur_params, &first.call, &first_result, rng)?;
    let second_result = execute_ok(world, &second.call)?;

    let t1 =
        turn(first.text.clone(), false, first.text.clone(), single_plan(&first.text, &first.api), vec![(first, first_result)]);
    let related = !second.context.is_empty();
    let rewritten = if related { grammar::render_clause(&second.api, &second.resolved) } else { second.text.clone() };
    if related {
        let back = grammar::parse_clause(&rewritten)?;
        if back.api != second.api || back.args != second.resolved || !back.unmatched.is_empty() {
            return None;
        }
    }
    let plan = single_plan(&rewritten, &second.api);
    let t2 = turn(second.text.clone(), related, rewritten, plan, vec![(second, second_result)]);
    Some(vec![t1, t2])
}

fn random_api(rng: &mut ChaCha8Rng) -> &'static str {
    catalog::tool_names().choose(rng).expect("non-empty catalog")
}

fn single_sample(world: &World, rng: &mut ChaCha8Rng) -> Option<SampleTurn> {
    let api = random_api(rng);
    let params = random_params(api, rng);
    let clause = literal_clause(api, world.draw(api, &params, rng)?, world.now)?;
    let result = execute_ok(world, &clause.call)?;
    let text = clause.text.clone();
    let plan = single_plan(&text, api);
    Some(turn(text.clone(), false, text, plan, vec![(clause, result)]))
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Clause separator of multi-intent queries.
pub const JOINER: &str = " and then ";

fn multi_sample(world: &World, rng: &mut ChaCha8Rng) -> Option<SampleTurn> {
    let mut clauses: Vec<(Clause, ToolResult, Vec<String>)> = Vec::new();
    let independent = if rng.random_bool(0.5) {
        let rule = transitions::ledger().choose(rng).expect("non-empty ledger");
        let combo = transitions::unrank(rule, rng.random_range(0..rule.combinations)).expect("in range");
        let prev_params = with_required(&rule.prev_api, &combo.prev_params(rule));
        let first = literal_clause(&rule.prev_api, world.draw(&rule.prev_api, &prev_params, rng)?, world.now)?;
        let first_result = execute_ok(world, &first.call)?;
        let cur_params = with_required(&rule.cur_api, &combo.cur_params(rule));
        let second = follow_up_clause(world, &rule.cur_api, &cur_params, &first.call, &first_result, rng)?;
        if second.context.is_empty() {
            return None;
        }
        // A schedule reference to several records would fan out.
        let refs_many =
            second.context.iter().any(|c| c.param == "schedule_id") && first_result.payload.as_ref().is_none_or(|p| p.len() != 1);
        if refs_many {
            return None;
        }
        let second_result = execute_ok(world, &second.call)?;
        clauses.push((first, first_result, vec![]));
        clauses.push((second, second_result, vec!["#E1".into()]));
        usize::from(rng.random_bool(0.5))
    } else {
        rng.random_range(2..=3)
    };
    for _ in 0..independent {
        let api = random_api(rng);
        let params = random_params(api, rng);
        let clause = literal_clause(api, world.draw(api, &params, rng)?, world.now)?;
        let result = execute_ok(world, &clause.call)?;
        clauses.push((clause, result, vec![]));
    }
    let texts: Vec<String> =
        clauses.iter().enumerate().map(|(i, (c, _, _))| if i == 0 { c.text.clone() } else { lower_first(&c.text) }).collect();
    let user_text = texts.join(JOINER);
    // The query must split back into exactly these clauses.
    if grammar::split_clauses(&user_text) != texts {
        return None;
    }
    let sub_tasks = clauses
        .iter()
        .zip(&texts)
        .enumerate()
        .map(|(i, ((c, _, deps), text))| {
            let mut st = SubTask::new(i + 1, text, &c.api);
            st.depends_on = deps.clone();
            st
        })
        .collect();
    let plan = Plan { sub_tasks };
    let pairs = clauses.into_iter().map(|(c, r, _)| (c, r)).collect();
    Some(turn(user_text.clone(), false, user_text, plan, pairs))
}

/// Office questions that name no operation the tools perform.
pub const NO_TOOL_QUERIES: [&str; 8] = [
    "How do I set up an email signature",
    "What is the keyboard shortcut for the calendar view",
    "Can you explain how meeting rooms get assigned",
    "Why does my inbox look different today",
    "Is there a size limit for group chats",
    "Tell me about the file sharing policy",
    "Which browser works best with the schedule page",
    "How long are deleted todo items kept",
];

pub const CHITCHAT_QUERIES: [&str; 6] =
    ["hello there", "how are you today", "thanks a lot", "tell me a joke", "good morning", "have a nice weekend"];

fn no_tool_turn(rng: &mut ChaCha8Rng) -> SampleTurn {
    let q = NO_TOOL_QUERIES.choose(rng).expect("non-empty").to_string();
    SampleTurn {
        user_text: q.clone(),
        gold_related: false,
        gold_rewritten: q.clone(),
        gold_intent: WorkerLabel::Wps365,
        gold_plan: Some(single_plan(&q, NO_API)),
        gold_calls: vec![],
        sim_results: vec![],
    }
}

fn chitchat_turn(rng: &mut ChaCha8Rng) -> SampleTurn {
    let q = CHITCHAT_QUERIES.choose(rng).expect("non-empty").to_string();
    SampleTurn {
        user_text: q.clone(),
        gold_related: false,
        gold_rewritten: q,
        gold_intent: WorkerLabel::Chitchat,
        gold_plan: None,
        gold_calls: vec![],
        sim_results: vec![],
    }
}

/// Distinct combinations per rule (`prev->cur`) among transition samples.
pub fn coverage(samples: &[DialogueSample]) -> BTreeMap<String, usize> {
    let mut seen: BTreeMap<String, BTreeSet<Combination>> = BTreeMap::new();
    for s in samples {
        if let (Some(key), Some(c)) = (s.rule_key(), s.combination) {
            seen.entry(key).or_default().insert(c);
        }
    }
    seen.into_iter().map(|(k, v)| (k, v.len())).collect()
}

pub fn write_jsonl<W: Write>(samples: &[DialogueSample], mut w: W) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::Datagen(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads samples one per line; blank lines are skipped.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<DialogueSample>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = serde_json::from_str(&line).map_err(|e| Error::parse(format!("line {}", n + 1), e.to_string()))?;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_names() {
        assert_eq!("full".parse::<Flow>().unwrap(), Flow::Full);
        assert_eq!("Chat".parse::<Flow>().unwrap(), Flow::Scenario(Scenario::Chat));
        let f: Flow = "transition:find_todo->delete_todo".parse().unwrap();
        assert_eq!(f.to_string(), "transition:find_todo->delete_todo");
        let err = "transition:delete_todo->find_todo".parse::<Flow>().unwrap_err();
        assert!(err.to_string().contains("delete_todo -> find_todo"), "{err}");
        assert!("bogus".parse::<Flow>().is_err());
    }

    #[test]
    fn coprime_steps_permute() {
        for n in [1u64, 3, 7, 31, 93, 127, 6141] {
            let a = coprime_step(n);
            let hit: BTreeSet<u64> = (0..n).map(|j| (a * j) % n).collect();
            assert_eq!(hit.len() as u64, n);
        }
    }

    #[test]
    fn every_rule_generates() {
        for r in transitions::ledger() {
            let cfg = DatagenConfig { flow: Flow::Rule(r.prev_api.clone(), r.cur_api.clone()), count: 12, seed: 5, noise: 0.0 };
            let samples = generate(&cfg).unwrap_or_else(|e| panic!("{}->{}: {e}", r.prev_api, r.cur_api));
            for s in &samples {
                assert_eq!(s.turns.len(), 2);
                assert_eq!(s.transition_path, vec![r.prev_api.clone(), r.cur_api.clone()]);
            }
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let samples = generate(&DatagenConfig { count: 40, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&samples, &mut buf).unwrap();
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), samples);
        let err = read_jsonl("{}\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
