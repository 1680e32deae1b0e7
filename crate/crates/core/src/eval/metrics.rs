//! Text, routing, plan and call metrics. Every score lies in [0, 1] and an
//! empty denominator scores 1.0, so identical empty inputs still agree.

use std::collections::HashMap;

use crate::types::{fmt_datetime, parse_datetime, Plan, ToolCall, Value};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tokenizer {
    /// Word runs and single punctuation marks.
    #[default]
    WordPunct,
    Whitespace,
}

impl Tokenizer {
    pub fn tokens(self, text: &str) -> Vec<&str> {
        match self {
            Tokenizer::Whitespace => text.split_whitespace().collect(),
            Tokenizer::WordPunct => {
                let mut out = Vec::new();
                let mut start = None;
                for (i, c) in text.char_indices() {
                    if c.is_alphanumeric() || c == '_' {
                        start.get_or_insert(i);
                        continue;
                    }
                    if let Some(s) = start.take() {
                        out.push(&text[s..i]);
                    }
                    if !c.is_whitespace() {
                        out.push(&text[i..i + c.len_utf8()]);
                    }
                }
                if let Some(s) = start {
                    out.push(&text[s..]);
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RougeVariant {
    /// Longest common subsequence F1.
    #[default]
    L,
    /// n-gram overlap F1.
    N(usize),
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn ngrams<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_matches(reference: &HashMap<Vec<&str>, usize>, hypothesis: &HashMap<Vec<&str>, usize>) -> usize {
    hypothesis.iter().map(|(g, c)| (*c).min(reference.get(g).copied().unwrap_or(0))).sum()
}

fn f1(overlap: usize, hyp_len: usize, ref_len: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp_len as f64;
    let r = overlap as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge(variant: RougeVariant, tokenizer: Tokenizer, reference: &str, hypothesis: &str) -> f64 {
    let r = tokenizer.tokens(reference);
    let h = tokenizer.tokens(hypothesis);
    if r.is_empty() {
        log::warn!("rouge: empty reference scored 0");
        return 0.0;
    }
    match variant {
        RougeVariant::L => f1(lcs_len(&r, &h), h.len(), r.len()),
        RougeVariant::N(n) => {
            let (rg, hg) = (ngrams(&r, n), ngrams(&h, n));
            let total_h: usize = hg.values().sum();
            let total_r: usize = rg.values().sum();
            f1(clipped_matches(&rg, &hg), total_h, total_r)
        }
    }
}

pub fn rouge_l(reference: &str, hypothesis: &str) -> f64 {
    rouge(RougeVariant::L, Tokenizer::default(), reference, hypothesis)
}

/// BLEU-4: geometric mean of add-one smoothed clipped n-gram precisions,
/// times the brevity penalty.
pub fn bleu_with(tokenizer: Tokenizer, reference: &str, hypothesis: &str) -> f64 {
    let r = tokenizer.tokens(reference);
    let h = tokenizer.tokens(hypothesis);
    if r.is_empty() {
        log::warn!("bleu: empty reference scored 0");
        return 0.0;
    }
    if h.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (rg, hg) = (ngrams(&r, n), ngrams(&h, n));
        let total: usize = hg.values().sum();
        let p = (clipped_matches(&rg, &hg) + 1) as f64 / (total + 1) as f64;
        log_sum += p.ln() / 4.0;
    }
    let bp = if h.len() > r.len() { 1.0 } else { (1.0 - r.len() as f64 / h.len() as f64).exp() };
    (bp * log_sum.exp()).clamp(0.0, 1.0)
}

pub fn bleu(reference: &str, hypothesis: &str) -> f64 {
    bleu_with(Tokenizer::default(), reference, hypothesis)
}

fn ratio(hit: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

fn same_len<A, B>(what: &str, pred: &[A], gold: &[B]) -> Result<()> {
    if pred.len() == gold.len() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{what}: {} predictions for {} gold entries", pred.len(), gold.len())))
    }
}

pub fn relate_acc(pred: &[bool], gold: &[bool]) -> Result<f64> {
    same_len("relate_acc", pred, gold)?;
    Ok(ratio(pred.iter().zip(gold).filter(|(p, g)| p == g).count(), gold.len()))
}

pub fn sub_tasks_num_acc(pred: &[Plan], gold: &[Plan]) -> Result<f64> {
    same_len("sub_tasks_num_acc", pred, gold)?;
    let hit = pred.iter().zip(gold).filter(|(p, g)| p.sub_tasks.len() == g.sub_tasks.len()).count();
    Ok(ratio(hit, gold.len()))
}

/// Api equality per sub-task position; positions present on one side only
/// count as wrong.
pub fn api_acc(pred: &[Plan], gold: &[Plan]) -> Result<f64> {
    same_len("api_acc", pred, gold)?;
    let (mut hit, mut total) = (0, 0);
    for (p, g) in pred.iter().zip(gold) {
        total += p.sub_tasks.len().max(g.sub_tasks.len());
        hit += p.sub_tasks.iter().zip(&g.sub_tasks).filter(|(a, b)| a.api_name == b.api_name).count();
    }
    Ok(ratio(hit, total))
}

/// ROUGE of each predicted clause against the gold clause at its position,
/// averaged over all positions; a missing clause scores 0.
pub fn planner_rouge(pred: &[Plan], gold: &[Plan]) -> Result<f64> {
    same_len("planner_rouge", pred, gold)?;
    let (mut sum, mut total) = (0.0, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        total += p.sub_tasks.len().max(g.sub_tasks.len());
        sum += p.sub_tasks.iter().zip(&g.sub_tasks).map(|(a, b)| rouge_l(&b.text, &a.text)).sum::<f64>();
    }
    Ok(if total == 0 { 1.0 } else { sum / total as f64 })
}

fn canonical_text(s: &str) -> String {
    let t = s.trim();
    parse_datetime(t).map(fmt_datetime).unwrap_or_else(|| t.to_string())
}

/// Datetimes in one format and lists as sorted sets.
pub fn canonical(v: &Value) -> Value {
    match v {
        Value::Text(s) => Value::Text(canonical_text(s)),
        Value::List(items) => {
            let mut out: Vec<String> = items.iter().map(|s| canonical_text(s)).collect();
            out.sort();
            out.dedup();
            Value::List(out)
        }
        other => other.clone(),
    }
}

pub fn calls_match(pred: &ToolCall, gold: &ToolCall) -> bool {
    pred.api_name == gold.api_name
        && pred.args.len() == gold.args.len()
        && pred.args.iter().all(|(k, v)| gold.args.get(k).is_some_and(|g| canonical(g) == canonical(v)))
}

/// Api and full argument agreement per aligned call position; positions
/// present on one side only count as wrong.
pub fn strict_accuracy(pred: &[Vec<ToolCall>], gold: &[Vec<ToolCall>]) -> Result<f64> {
    same_len("strict_accuracy", pred, gold)?;
    let (mut hit, mut total) = (0, 0);
    for (p, g) in pred.iter().zip(gold) {
        total += p.len().max(g.len());
        hit += p.iter().zip(g).filter(|(a, b)| calls_match(a, b)).count();
    }
    Ok(ratio(hit, total))
}

/// Api agreement over the same call alignment as `strict_accuracy`.
pub fn call_api_acc(pred: &[Vec<ToolCall>], gold: &[Vec<ToolCall>]) -> Result<f64> {
    same_len("call_api_acc", pred, gold)?;
    let (mut hit, mut total) = (0, 0);
    for (p, g) in pred.iter().zip(gold) {
        total += p.len().max(g.len());
        hit += p.iter().zip(g).filter(|(a, b)| a.api_name == b.api_name).count();
    }
    Ok(ratio(hit, total))
}
