//! Transition arithmetic and enumeration against brute-force counting.

use std::collections::HashSet;

use officeflow::catalog;
use officeflow::transitions::{self, enumerate_combinations, unrank};
use proptest::prelude::*;

/// Listed combination counts, in ledger order.
const LISTED: [u64; 16] = [6141, 93, 3937, 31, 127, 217, 7, 889, 7, 3, 127, 1, 3, 7, 381, 7];

/// Parameter counts of the 21 tools, in catalog order.
const PARAM_COUNTS: [usize; 21] = [11, 5, 2, 5, 7, 3, 1, 5, 2, 5, 7, 3, 2, 1, 1, 2, 2, 3, 1, 13, 1];

/// Non-empty subsets of an m-set paired with non-empty subsets of an n-set,
/// counted one by one.
fn brute_count(m: usize, n: usize) -> u64 {
    let nonempty = |k: usize| (0u64..1 << k).filter(|s| s.count_ones() > 0).count() as u64;
    let (a, b) = (nonempty(m), nonempty(n));
    (0..a).map(|_| b).sum()
}

#[test]
fn listed_counts_follow_from_catalog() {
    let ledger = transitions::ledger();
    assert_eq!(ledger.len(), 16);
    for (rule, listed) in ledger.iter().zip(LISTED) {
        let m = catalog::tool(&rule.prev_api).unwrap().params.len();
        let n = catalog::tool(&rule.cur_api).unwrap().params.len();
        assert_eq!(brute_count(m, n), listed, "{} -> {}", rule.prev_api, rule.cur_api);
        assert_eq!(rule.combinations, listed);
    }
    assert_eq!(ledger.iter().map(|r| r.combinations.min(500)).sum::<u64>(), 2511);
}

#[test]
fn catalog_param_counts() {
    let counts: Vec<usize> = catalog::catalog().iter().map(|t| t.params.len()).collect();
    assert_eq!(counts, PARAM_COUNTS);
    let mut names: Vec<&str> = catalog::tool_names();
    names.sort_unstable();
    names.dedup();
    assert_eq!(names.len(), 21);
}

#[test]
fn enumeration_is_exhaustive_and_distinct() {
    for rule in transitions::ledger() {
        let all: Vec<_> = enumerate_combinations(rule).collect();
        let distinct: HashSet<_> = all.iter().copied().collect();
        assert_eq!(all.len() as u64, rule.combinations);
        assert_eq!(distinct.len(), all.len());
        assert!(all.iter().all(|c| c.prev_mask > 0 && c.prev_mask < 1 << rule.m && c.cur_mask > 0 && c.cur_mask < 1 << rule.n));
    }
}

proptest! {
    #[test]
    fn unrank_matches_enumeration(rule_ix in 0usize..16, frac in 0.0f64..1.0) {
        let rule = &transitions::ledger()[rule_ix];
        let i = ((rule.combinations as f64) * frac) as u64;
        let c = unrank(rule, i).unwrap();
        prop_assert_eq!(Some(c), enumerate_combinations(rule).nth(i as usize));
        prop_assert!(unrank(rule, rule.combinations).is_none());
    }

    #[test]
    fn combinations_formula(m in 1u32..=13, n in 1u32..=13) {
        prop_assert_eq!(transitions::combinations(m, n), brute_count(m as usize, n as usize));
    }
}
