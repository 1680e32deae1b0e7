//! Label Studio export and import of generated samples.
//!
//! Each sample becomes one task. `data.text` lays out every turn's query,
//! rewrite and gold calls; `data.sample` carries the sample itself so an
//! unedited import is lossless. Pre-annotations go in `predictions[0]`:
//!
//! | from_name | type     | meaning                                          |
//! |-----------|----------|--------------------------------------------------|
//! | label     | labels   | api_name, arg_name, arg_value and mention spans  |
//! | api_check | choices  | "API correct" or "API error", per api_name span  |
//! | api_fix   | textarea | replacement api name, per api_name span          |
//! | (none)    | relation | "related" from a follow-up call to the one before |
//!
//! Region ids encode their position: `t2c1` is the api span of turn 2's first
//! call, `t2c1:start_time` the value span of its `start_time` argument.
//! Offsets count characters. Argument values are shown as JSON, and an edited
//! value span is parsed back as JSON.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use super::DialogueSample;
use crate::catalog;
use crate::error::{Error, Result};
use crate::types::{Value, NO_API};

pub const LABELS: [&str; 7] =
    ["api_name", "arg_name", "arg_value", "mention", "missed_arg_name", "missed_arg_value", "missed_mention"];
pub const API_CORRECT: &str = "API correct";
pub const API_ERROR: &str = "API error";
pub const RELATION: &str = "related";
pub const MODEL_VERSION: &str = "officeflow-datagen";

/// Labeling interface matching the exported documents.
pub const LABEL_CONFIG: &str = r#"<View>
  <Relations>
    <Relation value="related"/>
  </Relations>
  <Labels name="label" toName="text">
    <Label value="api_name"/>
    <Label value="arg_name"/>
    <Label value="arg_value"/>
    <Label value="mention"/>
    <Label value="missed_arg_name"/>
    <Label value="missed_arg_value"/>
    <Label value="missed_mention"/>
  </Labels>
  <Text name="text" value="$text"/>
  <Choices name="api_check" toName="text" perRegion="true">
    <Choice value="API correct"/>
    <Choice value="API error"/>
  </Choices>
  <TextArea name="api_fix" toName="text" perRegion="true"/>
</View>
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub label: String,
}

/// Builds the task text while tracking character offsets.
struct Doc {
    text: String,
    chars: usize,
    spans: Vec<Span>,
}

impl Doc {
    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    fn labeled(&mut self, id: String, label: &str, s: &str) {
        let start = self.chars;
        self.push(s);
        self.spans.push(Span { id, start, end: self.chars, text: s.to_string(), label: label.into() });
    }
}

fn value_json(v: &Value) -> String {
    serde_json::to_string(v).expect("values serialize")
}

/// Character range of the first match of `needle` in `hay`.
fn find_chars(hay: &str, needle: &str) -> Option<(usize, usize)> {
    if needle.is_empty() {
        return None;
    }
    let at = hay.find(needle)?;
    let start = hay[..at].chars().count();
    Some((start, start + needle.chars().count()))
}

/// Task text and spans for one sample.
pub fn layout(sample: &DialogueSample) -> (String, Vec<Span>) {
    let mut doc = Doc { text: String::new(), chars: 0, spans: Vec::new() };
    for (k, turn) in sample.turns.iter().enumerate() {
        let t = k + 1;
        doc.push(&format!("Turn {t}\nQuery: "));
        let query_chars = doc.chars;
        doc.push(&turn.user_text);
        doc.push(&format!("\nRewritten: {}\n", turn.gold_rewritten));
        let mut mentions = Vec::new();
        for (j, call) in turn.gold_calls.iter().enumerate() {
            let c = j + 1;
            doc.push(&format!("Call {c}: "));
            doc.labeled(format!("t{t}c{c}"), "api_name", &call.api_name);
            doc.push("\n");
            for (name, v) in &call.args {
                doc.push("  ");
                doc.labeled(format!("t{t}c{c}:{name}:name"), "arg_name", name);
                doc.push(" = ");
                doc.labeled(format!("t{t}c{c}:{name}"), "arg_value", &value_json(v));
                doc.push("\n");
                let shown: Vec<&str> = match v {
                    Value::Text(s) => vec![s.as_str()],
                    Value::List(items) => items.iter().map(String::as_str).collect(),
                    _ => vec![],
                };
                for s in shown {
                    mentions.push((format!("t{t}c{c}:{name}"), s.to_string()));
                }
            }
        }
        // Mentions point into the query line, first occurrence per value.
        let line = &turn.user_text;
        for (id, s) in mentions {
            if let Some((a, b)) = find_chars(line, &s) {
                let start = query_chars + a;
                let id = format!("{id}:mention:{a}");
                if doc.spans.iter().any(|x| x.id == id) {
                    continue;
                }
                doc.spans.push(Span { id, start, end: query_chars + b, text: s, label: "mention".into() });
            }
        }
        doc.push("\n");
    }
    (doc.text, doc.spans)
}

fn span_json(s: &Span) -> Json {
    json!({
        "id": s.id,
        "from_name": "label",
        "to_name": "text",
        "type": "labels",
        "value": { "start": s.start, "end": s.end, "text": s.text, "labels": [s.label] },
    })
}

/// One task document.
pub fn task(id: usize, sample: &DialogueSample) -> Json {
    let (text, spans) = layout(sample);
    let mut result: Vec<Json> = spans.iter().map(span_json).collect();
    for s in spans.iter().filter(|s| s.label == "api_name") {
        result.push(json!({
            "id": s.id, "from_name": "api_check", "to_name": "text", "type": "choices",
            "value": { "start": s.start, "end": s.end, "text": s.text, "choices": [API_CORRECT] },
        }));
    }
    // A related turn's first call follows from the previous turn's last call.
    for (k, turn) in sample.turns.iter().enumerate().skip(1) {
        let prev = &sample.turns[k - 1].gold_calls;
        if turn.gold_related && !turn.gold_calls.is_empty() && !prev.is_empty() {
            result.push(json!({
                "from_id": format!("t{}c1", k + 1),
                "to_id": format!("t{k}c{}", prev.len()),
                "type": "relation",
                "direction": "right",
                "labels": [RELATION],
            }));
        }
    }
    json!({
        "id": id,
        "data": { "text": text, "sample": sample },
        "predictions": [{ "model_version": MODEL_VERSION, "result": result }],
    })
}

pub fn export_annotation(samples: &[DialogueSample]) -> Result<String> {
    let tasks: Vec<Json> = samples.iter().enumerate().map(|(i, s)| task(i + 1, s)).collect();
    serde_json::to_string_pretty(&tasks).map_err(|e| Error::Datagen(e.to_string()))
}

fn bad(loc: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::parse(loc, msg)
}

fn slice_chars(text: &str, start: usize, end: usize) -> Option<&str> {
    let mut idx = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let a = idx.nth(start)?;
    let b = if end == start { a } else { idx.nth(end - start - 1)? };
    Some(&text[a..b])
}

fn result_lists(task: &Json) -> Vec<(&'static str, &Vec<Json>)> {
    let mut out = Vec::new();
    for key in ["annotations", "predictions"] {
        if let Some(list) = task.get(key).and_then(Json::as_array) {
            for r in list.iter().filter_map(|a| a.get("result").and_then(Json::as_array)) {
                out.push((key, r));
            }
        }
    }
    out
}

/// Checks document shape, span offsets and relation endpoints.
pub fn validate(doc: &Json) -> Result<()> {
    let tasks = doc.as_array().ok_or_else(|| bad("document", "expected an array of tasks"))?;
    for (ti, task) in tasks.iter().enumerate() {
        let loc = |m: &str| format!("task {}{m}", ti + 1);
        let text = task.pointer("/data/text").and_then(Json::as_str).ok_or_else(|| bad(loc(""), "missing data.text"))?;
        if !task.pointer("/data/sample").is_some_and(Json::is_object) {
            return Err(bad(loc(""), "missing data.sample"));
        }
        let len = text.chars().count();
        for (key, result) in result_lists(task) {
            let mut region_ids = Vec::new();
            for (ri, r) in result.iter().enumerate() {
                let at = loc(&format!(" {key} result {}", ri + 1));
                let kind = r.get("type").and_then(Json::as_str).ok_or_else(|| bad(&at, "missing type"))?;
                if kind == "relation" {
                    continue;
                }
                let id = r.get("id").and_then(Json::as_str).ok_or_else(|| bad(&at, "missing id"))?;
                let v = r.get("value").ok_or_else(|| bad(&at, "missing value"))?;
                match kind {
                    "labels" => {
                        let start = v.get("start").and_then(Json::as_u64).ok_or_else(|| bad(&at, "missing start"))? as usize;
                        let end = v.get("end").and_then(Json::as_u64).ok_or_else(|| bad(&at, "missing end"))? as usize;
                        if start > end || end > len {
                            return Err(bad(at, format!("span {start}..{end} outside text of {len} chars")));
                        }
                        let labels = v.get("labels").and_then(Json::as_array).ok_or_else(|| bad(&at, "missing labels"))?;
                        if let Some(l) = labels.iter().find(|l| !l.as_str().is_some_and(|l| LABELS.contains(&l))) {
                            return Err(bad(at, format!("unknown label {l}")));
                        }
                        region_ids.push(id);
                    }
                    "choices" => {
                        let choices = v.get("choices").and_then(Json::as_array).ok_or_else(|| bad(&at, "missing choices"))?;
                        if let Some(c) = choices.iter().find(|c| !matches!(c.as_str(), Some(API_CORRECT | API_ERROR))) {
                            return Err(bad(at, format!("unknown choice {c}")));
                        }
                    }
                    "textarea" => {
                        if !v.get("text").is_some_and(|t| t.is_array() || t.is_string()) {
                            return Err(bad(at, "textarea without text"));
                        }
                    }
                    other => return Err(bad(at, format!("unknown result type {other:?}"))),
                }
            }
            for (ri, r) in result.iter().enumerate().filter(|(_, r)| r.get("type").and_then(Json::as_str) == Some("relation")) {
                let at = loc(&format!(" {key} result {}", ri + 1));
                for end in ["from_id", "to_id"] {
                    let id = r.get(end).and_then(Json::as_str).ok_or_else(|| bad(&at, format!("missing {end}")))?;
                    if !region_ids.contains(&id) {
                        return Err(bad(at, format!("relation {end} {id:?} names no span")));
                    }
                }
            }
        }
    }
    Ok(())
}

/// `t2c1` → (turn index, call index), both from 0.
fn call_of(id: &str) -> Option<(usize, usize)> {
    let (t, c) = id.strip_prefix('t')?.split_once('c')?;
    let c = c.split(':').next()?;
    Some((t.parse::<usize>().ok()?.checked_sub(1)?, c.parse::<usize>().ok()?.checked_sub(1)?))
}

fn textarea_text(v: &Json) -> Option<String> {
    match v.get("text")? {
        Json::String(s) => Some(s.trim().to_string()),
        Json::Array(a) => a.iter().filter_map(Json::as_str).next().map(|s| s.trim().to_string()),
        _ => None,
    }
}

/// Reads a task document back into samples, applying the annotator's result
/// (the last annotation, else the prediction):
///
/// * "API error" with an `api_fix` text replaces that call's api, and the
///   api of the sub-task at the same position when the plan has one per call.
/// * an `arg_value` span whose text no longer matches replaces the argument
///   with the span text read as JSON.
pub fn import_annotation(text: &str) -> Result<Vec<DialogueSample>> {
    let doc: Json =
        serde_json::from_str(text).map_err(|e| bad(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    validate(&doc)?;
    let mut out = Vec::new();
    for (ti, task) in doc.as_array().into_iter().flatten().enumerate() {
        let loc = |m: String| format!("task {}{m}", ti + 1);
        let mut sample: DialogueSample =
            serde_json::from_value(task["data"]["sample"].clone()).map_err(|e| bad(loc(" data.sample".into()), e.to_string()))?;
        let chosen = task
            .get("annotations")
            .and_then(Json::as_array)
            .and_then(|a| a.iter().rev().find(|a| !a.get("was_cancelled").and_then(Json::as_bool).unwrap_or(false)))
            .or_else(|| task.get("predictions").and_then(Json::as_array).and_then(|p| p.first()));
        let Some(result) = chosen.and_then(|a| a.get("result")).and_then(Json::as_array) else {
            out.push(sample);
            continue;
        };
        let region = |r: &Json, from: &str| {
            r.get("from_name").and_then(Json::as_str) == Some(from) && r.get("id").and_then(Json::as_str).is_some()
        };
        for r in result.iter().filter(|r| region(r, "api_check")) {
            let id = r["id"].as_str().unwrap_or_default();
            let flagged = r.pointer("/value/choices").and_then(Json::as_array).is_some_and(|c| c.iter().any(|c| c == API_ERROR));
            if !flagged {
                continue;
            }
            let fix = result
                .iter()
                .filter(|x| region(x, "api_fix") && x["id"] == id)
                .find_map(|x| textarea_text(&x["value"]))
                .ok_or_else(|| bad(loc(format!(" region {id}")), "API error without an api_fix"))?;
            if fix != NO_API && catalog::tool(&fix).is_none() {
                return Err(bad(loc(format!(" region {id}")), format!("api_fix names unknown tool {fix:?}")));
            }
            let (t, c) = call_of(id).ok_or_else(|| bad(loc(format!(" region {id}")), "not a call region"))?;
            let turn = sample.turns.get_mut(t).ok_or_else(|| bad(loc(format!(" region {id}")), "no such turn"))?;
            let call = turn.gold_calls.get_mut(c).ok_or_else(|| bad(loc(format!(" region {id}")), "no such call"))?;
            call.api_name = fix.clone();
            let n_calls = turn.gold_calls.len();
            if let Some(plan) = turn.gold_plan.as_mut().filter(|p| p.sub_tasks.len() == n_calls) {
                plan.sub_tasks[c].api_name = fix;
            }
        }
        for r in result.iter().filter(|r| region(r, "label")) {
            let id = r["id"].as_str().unwrap_or_default();
            let is_value =
                r.pointer("/value/labels").and_then(Json::as_array).is_some_and(|l| l.iter().any(|l| l == "arg_value"));
            if !is_value {
                continue;
            }
            let Some(edited) = r.pointer("/value/text").and_then(Json::as_str) else { continue };
            let mut parts = id.splitn(2, ':');
            let (Some(call_id), Some(arg)) = (parts.next(), parts.next()) else { continue };
            let Some((t, c)) = call_of(call_id) else { continue };
            let Some(call) = sample.turns.get_mut(t).and_then(|turn| turn.gold_calls.get_mut(c)) else {
                return Err(bad(loc(format!(" region {id}")), "no such call"));
            };
            let Some(current) = call.args.get(arg) else {
                return Err(bad(loc(format!(" region {id}")), format!("call has no argument {arg:?}")));
            };
            if value_json(current) == edited {
                continue;
            }
            let v: Value = serde_json::from_str(edited)
                .map_err(|e| bad(loc(format!(" region {id}")), format!("edited value is not JSON: {e}")))?;
            call.args.insert(arg.to_string(), v);
        }
        out.push(sample);
    }
    Ok(out)
}

/// Every label span's offsets slice the task text to its labeled value.
pub fn spans_consistent(task: &Json) -> bool {
    let Some(text) = task.pointer("/data/text").and_then(Json::as_str) else { return false };
    result_lists(task).iter().flat_map(|(_, r)| r.iter()).filter(|r| r["type"] == "labels").all(|r| {
        let (Some(s), Some(e), Some(t)) = (
            r.pointer("/value/start").and_then(Json::as_u64),
            r.pointer("/value/end").and_then(Json::as_u64),
            r.pointer("/value/text").and_then(Json::as_str),
        ) else {
            return false;
        };
        slice_chars(text, s as usize, e as usize) == Some(t)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, DatagenConfig, Flow};

    fn samples() -> Vec<DialogueSample> {
        let flow: Flow = "transition:create_schedule->update_schedule".parse().unwrap();
        generate(&DatagenConfig { flow, count: 4, seed: 3, noise: 0.0 }).unwrap()
    }

    #[test]
    fn round_trip_and_offsets() {
        let s = samples();
        let doc = export_annotation(&s).unwrap();
        let json: Json = serde_json::from_str(&doc).unwrap();
        assert!(json.as_array().unwrap().iter().all(spans_consistent));
        assert_eq!(import_annotation(&doc).unwrap(), s);
    }

    #[test]
    fn api_error_flips() {
        let mut s = samples();
        s.truncate(1);
        let right = s[0].turns[1].gold_calls[0].api_name.clone();
        s[0].turns[1].gold_calls[0].api_name = "delete_schedule".into();
        let mut doc: Json = serde_json::from_str(&export_annotation(&s).unwrap()).unwrap();
        let mut result = doc[0]["predictions"][0]["result"].as_array().unwrap().clone();
        for r in result.iter_mut().filter(|r| r["id"] == "t2c1" && r["from_name"] == "api_check") {
            r["value"]["choices"] = json!([API_ERROR]);
        }
        result.push(json!({"id": "t2c1", "from_name": "api_fix", "to_name": "text", "type": "textarea", "value": {"text": [right.clone()]}}));
        doc[0]["annotations"] = json!([{ "result": result }]);
        let back = import_annotation(&doc.to_string()).unwrap();
        assert_eq!(back[0].turns[1].gold_calls[0].api_name, right);
    }

    #[test]
    fn malformed() {
        assert!(matches!(import_annotation("[{\"id\": 1,"), Err(Error::Parse { .. })));
        let e = import_annotation(
            r#"[{"data": {"text": "ab", "sample": {}}, "predictions": [{"result": [
            {"id": "x", "type": "labels", "from_name": "label", "value": {"start": 1, "end": 5, "labels": ["api_name"]}}]}]}]"#,
        );
        assert!(matches!(e, Err(Error::Parse { location, .. }) if location.contains("task 1")));
    }
}
