//! Independent oracles shared by the metric tests and the acceptance suite.
#![allow(dead_code)]

use regex::Regex;

/// Frozen (reference, hypothesis) pairs, at most 12 tokens a side.
pub const PAIRS: [(&str, &str); 10] = [
    ("the cat sat", "the cat ran"),
    ("Search for the emails I received today", "Search the emails received today"),
    ("Move the start time up to 2 PM", "Move the meeting to 2 PM"),
    ("Create a todo titled \"buy milk\", due 5 PM", "Create a todo titled \"buy milk\""),
    ("Delete all meetings at 3 PM today", "Delete all meetings at 3 PM today"),
    ("a b c d e f g h", "a b c d x f g h"),
    ("Send an email to Jiashu Xia", "Email Jiashu Xia please"),
    ("Check Jiashu Xia's free time tomorrow?", "Check free time of Jiashu Xia tomorrow ?"),
    ("Summarize the emails", "Summarize the chat messages"),
    ("the the the cat", "the cat the the"),
];

fn oracle_tokens(s: &str) -> Vec<String> {
    Regex::new(r"\w+|[^\w\s]").unwrap().find_iter(s).map(|m| m.as_str().to_string()).collect()
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == *x))
}

/// Longest common subsequence by trying every subset of the hypothesis.
fn brute_lcs(r: &[String], h: &[String]) -> usize {
    (0u32..1 << h.len())
        .filter_map(|mask| {
            let pick: Vec<&String> = h.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, t)| t).collect();
            is_subsequence(&pick, r).then_some(pick.len())
        })
        .max()
        .unwrap_or(0)
}

pub fn oracle_rouge_l(reference: &str, hypothesis: &str) -> f64 {
    let (r, h) = (oracle_tokens(reference), oracle_tokens(hypothesis));
    let l = brute_lcs(&r, &h) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rc) = (l / h.len() as f64, l / r.len() as f64);
    2.0 * p * rc / (p + rc)
}

/// Clipped n-gram matches counted position by position.
fn brute_matches(r: &[String], h: &[String], n: usize) -> (usize, usize) {
    if h.len() < n {
        return (0, 0);
    }
    let grams =
        |t: &[String]| -> Vec<Vec<String>> { (0..t.len()).filter(|i| i + n <= t.len()).map(|i| t[i..i + n].to_vec()).collect() };
    let (rg, hg) = (grams(r), grams(h));
    let mut seen: Vec<&Vec<String>> = Vec::new();
    let mut matched = 0;
    for g in &hg {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        let in_h = hg.iter().filter(|x| *x == g).count();
        let in_r = rg.iter().filter(|x| *x == g).count();
        matched += in_h.min(in_r);
    }
    (matched, hg.len())
}

pub fn oracle_bleu(reference: &str, hypothesis: &str) -> f64 {
    let (r, h) = (oracle_tokens(reference), oracle_tokens(hypothesis));
    if r.is_empty() || h.is_empty() {
        return 0.0;
    }
    let mut prod = 1.0;
    for n in 1..=4 {
        let (m, total) = brute_matches(&r, &h, n);
        prod *= (m + 1) as f64 / (total + 1) as f64;
    }
    let bp = if h.len() > r.len() { 1.0 } else { (1.0 - r.len() as f64 / h.len() as f64).exp() };
    bp * prod.powf(0.25)
}
