//! The 21-tool office catalog and call validation.
//!
//! The catalog is a versioned JSON document compiled into the binary
//! (`data/catalog.json`). It is checked once at first use: unique tool names,
//! unique parameter names, and enum values present exactly for enum kinds.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{parse_datetime, ToolCall, ToolSpec, Value, ValueKind};

pub const CATALOG_JSON: &str = include_str!("../data/catalog.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogDocument {
    pub version: u32,
    pub tools: Vec<ToolSpec>,
}

/// Parses and checks a catalog document.
pub fn parse_catalog(text: &str) -> Result<Vec<ToolSpec>> {
    let doc: CatalogDocument =
        serde_json::from_str(text).map_err(|e| Error::parse(format!("catalog line {}", e.line()), e.to_string()))?;
    let mut names = BTreeSet::new();
    for t in &doc.tools {
        if !names.insert(t.name.clone()) {
            return Err(Error::Integrity(format!("duplicate tool {}", t.name)));
        }
        let mut pnames = BTreeSet::new();
        for p in &t.params {
            if !pnames.insert(p.name.clone()) {
                return Err(Error::Integrity(format!("{}: duplicate param {}", t.name, p.name)));
            }
            let has_enum = p.enum_values.as_ref().is_some_and(|v| !v.is_empty());
            if has_enum != (p.value_kind == ValueKind::Enum) {
                return Err(Error::Integrity(format!("{}.{}: enum values vs kind", t.name, p.name)));
            }
        }
    }
    Ok(doc.tools)
}

/// All tools, in catalog order (grouped by scenario).
pub fn catalog() -> &'static [ToolSpec] {
    static CATALOG: OnceLock<Vec<ToolSpec>> = OnceLock::new();
    CATALOG.get_or_init(|| parse_catalog(CATALOG_JSON).expect("embedded catalog is valid"))
}

pub fn tool(name: &str) -> Option<&'static ToolSpec> {
    catalog().iter().find(|t| t.name == name)
}

pub fn require_tool(name: &str) -> Result<&'static ToolSpec> {
    tool(name).ok_or_else(|| Error::UnknownTool(name.to_string()))
}

pub fn tool_names() -> Vec<&'static str> {
    catalog().iter().map(|t| t.name.as_str()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    Missing { param: String },
    Unknown { param: String },
    TypeMismatch { param: String, expected: ValueKind },
}

impl Violation {
    pub fn param(&self) -> &str {
        match self {
            Violation::Missing { param } | Violation::Unknown { param } | Violation::TypeMismatch { param, .. } => param,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn missing(&self) -> Vec<&str> {
        self.violations
            .iter()
            .filter_map(|v| match v {
                Violation::Missing { param } => Some(param.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn unknown(&self) -> Vec<&str> {
        self.violations
            .iter()
            .filter_map(|v| match v {
                Violation::Unknown { param } => Some(param.as_str()),
                _ => None,
            })
            .collect()
    }
}

/// Whether `value` is acceptable for a parameter of `kind`.
pub fn type_checks(kind: ValueKind, enum_values: Option<&[String]>, value: &Value) -> bool {
    match (kind, value) {
        (ValueKind::String | ValueKind::Person, Value::Text(s)) => !s.is_empty(),
        (ValueKind::Id, Value::Text(s)) => !s.is_empty() && !s.contains(char::is_whitespace),
        (ValueKind::Datetime, Value::Text(s)) => parse_datetime(s).is_some(),
        (ValueKind::DatetimeRange, Value::List(v)) => {
            v.len() == 2
                && match (parse_datetime(&v[0]), parse_datetime(&v[1])) {
                    (Some(a), Some(b)) => a <= b,
                    _ => false,
                }
        }
        (ValueKind::Integer, Value::Int(_)) => true,
        (ValueKind::Boolean, Value::Bool(_)) => true,
        (ValueKind::Enum, Value::Text(s)) => enum_values.is_some_and(|e| e.iter().any(|x| x == s)),
        (ValueKind::IdList, Value::List(v)) => {
            !v.is_empty() && v.iter().all(|s| !s.is_empty() && !s.contains(char::is_whitespace))
        }
        (ValueKind::StringList, Value::List(v)) => !v.is_empty() && v.iter().all(|s| !s.is_empty()),
        _ => false,
    }
}

/// Checks a call against its spec: missing required, unknown and mistyped
/// params, each reported by name in catalog order (unknown ones sorted).
pub fn validate_call(spec: &ToolSpec, call: &ToolCall) -> Result<ValidationReport> {
    if call.api_name != spec.name {
        return Err(Error::Usage(format!("call for {} validated against {}", call.api_name, spec.name)));
    }
    let mut report = ValidationReport::default();
    for p in &spec.params {
        match call.args.get(&p.name) {
            None if p.required => report.violations.push(Violation::Missing { param: p.name.clone() }),
            None => {}
            Some(v) if !type_checks(p.value_kind, p.enum_values.as_deref(), v) => {
                report.violations.push(Violation::TypeMismatch { param: p.name.clone(), expected: p.value_kind })
            }
            Some(_) => {}
        }
    }
    for k in call.args.keys() {
        if spec.param(k).is_none() {
            report.violations.push(Violation::Unknown { param: k.clone() });
        }
    }
    Ok(report)
}

/// Validates a call against the catalog entry named by its `api_name`.
pub fn validate(call: &ToolCall) -> Result<ValidationReport> {
    validate_call(require_tool(&call.api_name)?, call)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn send_email_missing_required() {
        let r = validate(&ToolCall::new("send_email")).unwrap();
        assert_eq!(r.missing(), vec!["to", "subject", "body"]);
    }

    #[test]
    fn unknown_param_reported() {
        let call = ToolCall::new("create_todo").arg("title", Value::text("x")).arg("bogus", Value::text("y"));
        let r = validate(&call).unwrap();
        assert_eq!(r.unknown(), vec!["bogus"]);
        assert_eq!(r.violations.len(), 1);
    }

    #[test]
    fn mismatched_api_is_usage_error() {
        let spec = tool("delete_schedule").unwrap();
        assert!(matches!(validate_call(spec, &ToolCall::new("create_todo")), Err(Error::Usage(_))));
    }

    #[test]
    fn enum_and_datetime_checks() {
        let ok = ToolCall::new("search_email")
            .arg("folder", Value::text("inbox"))
            .arg("start_time", Value::text("2024-06-04T00:00:00"));
        assert!(validate(&ok).unwrap().is_ok());
        let bad = ToolCall::new("search_email").arg("folder", Value::text("spam")).arg("limit", Value::text("3"));
        assert_eq!(validate(&bad).unwrap().violations.len(), 2);
    }

    #[test]
    fn duplicate_tool_rejected() {
        let doc = r#"{"version":1,"tools":[
            {"name":"a","scenario":"Email","description":"","params":[]},
            {"name":"a","scenario":"Email","description":"","params":[]}]}"#;
        assert!(matches!(parse_catalog(doc), Err(Error::Integrity(_))));
    }
}
