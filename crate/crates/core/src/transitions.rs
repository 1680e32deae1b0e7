//! Previous-turn → current-turn tool transitions and their parameter
//! combination counts.
//!
//! A transition from a tool with `m` parameters to one with `n` parameters
//! admits `(2^m - 1)(2^n - 1)` choices of non-empty parameter subsets. The
//! ledger of listed transitions ships in `data/ledger.json` with the printed
//! counts and complexity labels; loading recomputes both from the catalog
//! and refuses to start if anything disagrees.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::error::{Error, Result};
use crate::types::{Scenario, ToolSpec};

pub const LEDGER_JSON: &str = include_str!("../data/ledger.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Complexity {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRule {
    pub scenario: Scenario,
    pub prev_api: String,
    pub cur_api: String,
    pub m: u32,
    pub n: u32,
    pub combinations: u64,
    pub complexity: Complexity,
}

#[derive(Debug, Clone, Deserialize)]
struct LedgerRow {
    scenario: Scenario,
    prev_api: String,
    cur_api: String,
    printed_combinations: u64,
    printed_complexity: Complexity,
}

#[derive(Debug, Clone, Deserialize)]
struct LedgerDocument {
    rows: Vec<LedgerRow>,
}

/// `(2^m - 1)(2^n - 1)`. Valid for `m, n <= 32`.
pub fn combinations(m: u32, n: u32) -> u64 {
    assert!(m <= 32 && n <= 32, "parameter counts above 32 are not supported");
    ((1u64 << m) - 1) * ((1u64 << n) - 1)
}

/// Complexity bands fitted to the listed transitions: up to 31 is Low, up
/// to 217 Medium, anything larger High.
pub fn classify(combinations: u64) -> Complexity {
    match combinations {
        0..=31 => Complexity::Low,
        32..=217 => Complexity::Medium,
        _ => Complexity::High,
    }
}

/// Builds rules from a ledger document, checking every printed value
/// against the counts derived from `tools`.
pub fn build_ledger(ledger_json: &str, tools: &[ToolSpec]) -> Result<Vec<TransitionRule>> {
    let doc: LedgerDocument =
        serde_json::from_str(ledger_json).map_err(|e| Error::parse(format!("ledger line {}", e.line()), e.to_string()))?;
    let count = |name: &str| -> Result<u32> {
        tools
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.params.len() as u32)
            .ok_or_else(|| Error::Integrity(format!("ledger names unknown tool {name}")))
    };
    doc.rows
        .into_iter()
        .map(|row| {
            let (m, n) = (count(&row.prev_api)?, count(&row.cur_api)?);
            let c = combinations(m, n);
            if c != row.printed_combinations {
                return Err(Error::Integrity(format!(
                    "{} -> {}: catalog gives {c} combinations, ledger prints {}",
                    row.prev_api, row.cur_api, row.printed_combinations
                )));
            }
            if classify(c) != row.printed_complexity {
                return Err(Error::Integrity(format!(
                    "{} -> {}: {c} classifies as {:?}, ledger prints {:?}",
                    row.prev_api,
                    row.cur_api,
                    classify(c),
                    row.printed_complexity
                )));
            }
            Ok(TransitionRule {
                scenario: row.scenario,
                prev_api: row.prev_api,
                cur_api: row.cur_api,
                m,
                n,
                combinations: c,
                complexity: row.printed_complexity,
            })
        })
        .collect()
}

/// The 16 listed transitions, verified against the catalog on first use.
pub fn ledger() -> &'static [TransitionRule] {
    static LEDGER: OnceLock<Vec<TransitionRule>> = OnceLock::new();
    LEDGER.get_or_init(|| match build_ledger(LEDGER_JSON, catalog::catalog()) {
        Ok(rules) => rules,
        Err(e) => panic!("transition ledger failed its integrity check: {e}"),
    })
}

pub fn rule(prev: &str, cur: &str) -> Option<&'static TransitionRule> {
    ledger().iter().find(|r| r.prev_api == prev && r.cur_api == cur)
}

/// One choice of parameter subsets as bitmasks over catalog parameter order
/// (bit 0 = first parameter).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Combination {
    pub prev_mask: u64,
    pub cur_mask: u64,
}

impl Combination {
    pub fn prev_params(&self, rule: &TransitionRule) -> Vec<&'static str> {
        mask_params(&rule.prev_api, self.prev_mask)
    }

    pub fn cur_params(&self, rule: &TransitionRule) -> Vec<&'static str> {
        mask_params(&rule.cur_api, self.cur_mask)
    }
}

/// Parameter names selected by `mask` for tool `api`.
pub fn mask_params(api: &str, mask: u64) -> Vec<&'static str> {
    catalog::tool(api)
        .map(|t| t.params.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, p)| p.name.as_str()).collect())
        .unwrap_or_default()
}

/// The combination at position `index` of the enumeration order.
pub fn unrank(rule: &TransitionRule, index: u64) -> Option<Combination> {
    if index >= rule.combinations {
        return None;
    }
    let inner = (1u64 << rule.n) - 1;
    Some(Combination { prev_mask: 1 + index / inner, cur_mask: 1 + index % inner })
}

/// Streams every combination of a rule in lexicographic bitmask order
/// (previous mask outer, current mask inner) without materializing them.
#[derive(Debug, Clone)]
pub struct Combinations {
    prev_max: u64,
    cur_max: u64,
    next: Option<Combination>,
    remaining: u64,
}

impl Iterator for Combinations {
    type Item = Combination;

    fn next(&mut self) -> Option<Combination> {
        let cur = self.next?;
        self.remaining -= 1;
        self.next = if cur.cur_mask < self.cur_max {
            Some(Combination { prev_mask: cur.prev_mask, cur_mask: cur.cur_mask + 1 })
        } else if cur.prev_mask < self.prev_max {
            Some(Combination { prev_mask: cur.prev_mask + 1, cur_mask: 1 })
        } else {
            None
        };
        Some(cur)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining as usize, Some(self.remaining as usize))
    }
}

impl ExactSizeIterator for Combinations {}

pub fn enumerate_combinations(rule: &TransitionRule) -> Combinations {
    let prev_max = (1u64 << rule.m) - 1;
    let cur_max = (1u64 << rule.n) - 1;
    let empty = prev_max == 0 || cur_max == 0;
    Combinations {
        prev_max,
        cur_max,
        next: (!empty).then_some(Combination { prev_mask: 1, cur_mask: 1 }),
        remaining: prev_max * cur_max,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLink {
    pub prev_api: String,
    pub cur_api: String,
    /// Whether the pair appears in the ledger; unlisted pairs are warnings.
    pub listed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChainReport {
    pub links: Vec<ChainLink>,
}

impl ChainReport {
    pub fn all_listed(&self) -> bool {
        self.links.iter().all(|l| l.listed)
    }

    pub fn warnings(&self) -> Vec<String> {
        self.links.iter().filter(|l| !l.listed).map(|l| format!("unlisted transition {} -> {}", l.prev_api, l.cur_api)).collect()
    }
}

/// Flags each adjacent pair of a tool chain as listed or unlisted.
pub fn validate_chain(apis: &[&str]) -> Result<ChainReport> {
    for a in apis {
        catalog::require_tool(a).map_err(|_| Error::Usage(format!("unknown api {a} in chain")))?;
    }
    Ok(ChainReport {
        links: apis
            .windows(2)
            .map(|w| ChainLink { prev_api: w[0].to_string(), cur_api: w[1].to_string(), listed: rule(w[0], w[1]).is_some() })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        assert_eq!(combinations(11, 2), 6141);
        assert_eq!(combinations(5, 7), 3937);
        assert_eq!(combinations(0, 5), 0);
    }

    #[test]
    fn classify_bands() {
        assert_eq!(classify(31), Complexity::Low);
        assert_eq!(classify(217), Complexity::Medium);
        assert_eq!(classify(381), Complexity::High);
    }

    #[test]
    fn ledger_rows() {
        let r = rule("find_schedule_status", "update_schedule").unwrap();
        assert_eq!((r.combinations, r.complexity), (889, Complexity::High));
        let r = rule("search_group_chat", "summary_chatmsg").unwrap();
        assert_eq!((r.combinations, r.complexity), (1, Complexity::Low));
        let r = rule("summary_email", "send_email").unwrap();
        assert_eq!((r.combinations, r.complexity), (93, Complexity::Medium));
    }

    #[test]
    fn tampered_ledger_is_rejected() {
        let bad = LEDGER_JSON.replacen("6141", "6140", 1);
        assert!(matches!(build_ledger(&bad, catalog::catalog()), Err(Error::Integrity(_))));
    }

    #[test]
    fn first_and_last_combination() {
        let r = rule("find_todo", "delete_todo").unwrap();
        let all: Vec<_> = enumerate_combinations(r).collect();
        assert_eq!(all.len(), 7);
        assert_eq!(all[0].prev_params(r), vec!["keywords"]);
        assert_eq!(all[0].cur_params(r), vec!["todo_ids"]);
        assert_eq!(all.last().unwrap().prev_params(r), vec!["keywords", "status", "due_before"]);
    }

    #[test]
    fn unrank_matches_stream() {
        let r = rule("summary_email", "send_email").unwrap();
        for (i, c) in enumerate_combinations(r).enumerate() {
            assert_eq!(unrank(r, i as u64), Some(c));
        }
        assert_eq!(unrank(r, r.combinations), None);
    }

    #[test]
    fn chains() {
        assert!(validate_chain(&["search_email", "summary_email", "send_email"]).unwrap().all_listed());
        let r = validate_chain(&["delete_todo", "create_todo"]).unwrap();
        assert_eq!(r.warnings().len(), 1);
        assert!(validate_chain(&[]).unwrap().links.is_empty());
        assert!(validate_chain(&["nope"]).is_err());
    }
}
