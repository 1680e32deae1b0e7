//! Tool retrieval: embedders, the tool index, recall training pairs and the
//! top-k recall harness.
//!
//! The reference embedder hashes word unigrams and character trigrams into
//! `d` signed buckets and L2-normalizes. Tool text is the name (counted
//! twice), the description and the parameter names.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar;
use crate::types::{ToolSpec, NO_API};

pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_K: usize = 5;

pub trait Embedder: Send + Sync {
    fn id(&self) -> String;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: DEFAULT_DIM }
    }
}

const STOPWORDS: [&str; 24] = [
    "a", "an", "the", "to", "of", "for", "and", "then", "with", "by", "in", "on", "at", "or", "is", "are", "that", "i", "my",
    "me", "please", "all", "those", "these",
];

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Strips a plural `s` so "emails" and "email" share features.
fn stem(w: &str) -> &str {
    if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") {
        &w[..w.len() - 1]
    } else {
        w
    }
}

/// Lowercased, singularized alphanumeric words with stopwords removed.
pub fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(w))
        .map(|w| stem(w).to_string())
        .collect()
}

impl Embedder for HashingEmbedder {
    fn id(&self) -> String {
        format!("hashing-v1-d{}", self.dim)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(Error::Usage("cannot embed empty text".into()));
        }
        let mut v = vec![0.0; self.dim];
        let mut add = |feature: &str, weight: f64| {
            let h = fnv1a(feature.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign * weight;
        };
        let toks = tokens(text);
        for t in &toks {
            add(&format!("w:{t}"), 1.0);
            let padded: Vec<char> = format!("#{t}#").chars().collect();
            for tri in padded.windows(3) {
                add(&format!("c:{}", tri.iter().collect::<String>()), 0.5);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Only stopwords: fall back to hashing the raw text.
            let h = fnv1a(text.trim().to_lowercase().as_bytes());
            v[(h % self.dim as u64) as usize] = 1.0;
            return Ok(v);
        }
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Text embedded for a tool.
pub fn tool_text(spec: &ToolSpec, with_params: bool) -> String {
    let name = spec.name.replace('_', " ");
    let mut s = format!("{name} {name} {}", spec.description);
    if with_params {
        for p in &spec.params {
            s.push(' ');
            s.push_str(&p.name.replace('_', " "));
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub api_name: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolIndex {
    pub embedder_id: String,
    pub dimension: usize,
    pub entries: Vec<IndexEntry>,
}

impl ToolIndex {
    pub fn build(embedder: &dyn Embedder, tools: &[ToolSpec], with_params: bool) -> Result<Self> {
        let entries = tools
            .iter()
            .map(|t| Ok(IndexEntry { api_name: t.name.clone(), vector: embedder.embed(&tool_text(t, with_params))? }))
            .collect::<Result<Vec<_>>>()?;
        let dimension = entries.first().map_or(0, |e| e.vector.len());
        Ok(ToolIndex { embedder_id: embedder.id(), dimension, entries })
    }

    /// Index of the full catalog with the reference embedder.
    pub fn reference() -> Self {
        Self::build(&HashingEmbedder::default(), crate::catalog::catalog(), true).expect("tool texts are non-empty")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let index: ToolIndex = serde_json::from_str(&text)
            .map_err(|e| Error::parse(format!("{}:{}:{}", path.display(), e.line(), e.column()), e.to_string()))?;
        if index.entries.iter().any(|e| e.vector.len() != index.dimension) {
            return Err(Error::Integrity(format!("{}: vector length differs from dimension", path.display())));
        }
        Ok(index)
    }

    /// Top-k tools by cosine score; ties go to the lexicographically
    /// smaller name.
    pub fn recall(&self, embedder: &dyn Embedder, query: &str, k: usize) -> Result<Vec<(String, f64)>> {
        if embedder.id() != self.embedder_id {
            return Err(Error::Usage(format!("index built by {} queried with {}", self.embedder_id, embedder.id())));
        }
        if k == 0 || k > self.entries.len() {
            return Err(Error::Usage(format!("k must be in 1..={}", self.entries.len())));
        }
        let q = embedder.embed(query)?;
        let mut scored: Vec<(String, f64)> = self.entries.iter().map(|e| (e.api_name.clone(), cosine(&q, &e.vector))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Candidate tools for a query: the union of each clause's top-k.
    pub fn candidates(&self, embedder: &dyn Embedder, query: &str, k: usize) -> Result<Vec<String>> {
        let mut out: Vec<String> = Vec::new();
        for clause in grammar::split_clauses(query) {
            let text = retrieval_query(&clause);
            for (name, _) in self.recall(embedder, &text, k)? {
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        Ok(out)
    }
}

/// Text embedded for one clause on the worker path: the recognized wording
/// without argument values, else the clause without quoted literals.
pub fn retrieval_query(clause: &str) -> String {
    let skeleton = grammar::parse_clause(clause).map(|c| c.skeleton).unwrap_or_default();
    if tokens(&skeleton).is_empty() {
        let text = retrieval_text(clause);
        if tokens(&text).is_empty() {
            clause.to_string()
        } else {
            text
        }
    } else {
        skeleton
    }
}

/// Query text with quoted literals removed.
pub fn retrieval_text(query: &str) -> String {
    let (masked, _) = grammar::mask_quotes(query);
    let re = regex::Regex::new(r#""Q\d+""#).unwrap();
    re.replace_all(&masked, " ").into_owned()
}

/// A query with its gold clause-level APIs, the input to pair building.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentSample {
    pub query: String,
    /// (clause text, gold api) in order.
    pub clauses: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallPair {
    pub query: String,
    pub positives: Vec<String>,
    #[serde(default)]
    pub negatives: Vec<String>,
}

/// One pair per clause with a tool; returns the pairs and the number of
/// clauses skipped for having none.
pub fn build_pairs_v1(samples: &[IntentSample]) -> (Vec<RecallPair>, usize) {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for s in samples {
        for (clause, api) in &s.clauses {
            if api == NO_API || api.is_empty() {
                skipped += 1;
                continue;
            }
            pairs.push(RecallPair { query: clause.clone(), positives: vec![api.clone()], negatives: vec![] });
        }
    }
    (pairs, skipped)
}

/// One pair per sample: every gold api positive, three negatives drawn
/// uniformly without replacement from the rest of the catalog.
pub fn build_pairs_v2(samples: &[IntentSample], seed: u64) -> Result<Vec<RecallPair>> {
    let names = crate::catalog::tool_names();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for s in samples {
        let positives: Vec<String> =
            s.clauses.iter().map(|(_, a)| a.clone()).filter(|a| a != NO_API).collect::<BTreeSet<_>>().into_iter().collect();
        if positives.is_empty() {
            continue;
        }
        let rest: Vec<&str> = names.iter().copied().filter(|n| !positives.iter().any(|p| p == n)).collect();
        if rest.len() < 3 {
            return Err(Error::Datagen(format!("{:?}: fewer than 3 tools left for negatives", s.query)));
        }
        let negatives = rest.choose_multiple(&mut rng, 3).map(|n| n.to_string()).collect();
        pairs.push(RecallPair { query: s.query.clone(), positives, negatives });
    }
    Ok(pairs)
}

/// Fraction of gold APIs found in the top-k of their pair's query,
/// micro-averaged over all gold APIs.
pub fn eval_recall(index: &ToolIndex, embedder: &dyn Embedder, pairs: &[RecallPair], k: usize) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for p in pairs {
        let top: Vec<String> = index.recall(embedder, &p.query, k)?.into_iter().map(|(n, _)| n).collect();
        for g in &p.positives {
            total += 1;
            hit += usize::from(top.contains(g));
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Queries derived from each tool's description: the description itself, a
/// request phrasing of it, and the description without its final word.
pub fn description_queries() -> Vec<RecallPair> {
    let mut out = Vec::new();
    for t in crate::catalog::catalog() {
        let d = t.description.trim_end_matches('.');
        let mut words: Vec<&str> = d.split_whitespace().collect();
        let lower = d.to_lowercase();
        let mut qs = vec![d.to_string(), format!("please {lower}")];
        if words.len() > 2 {
            words.pop();
            qs.push(words.join(" "));
        }
        for q in qs {
            out.push(RecallPair { query: q, positives: vec![t.name.clone()], negatives: vec![] });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_properties() {
        let e = HashingEmbedder::default();
        let a = e.embed("a").unwrap();
        assert_eq!(a, e.embed("a").unwrap());
        let q = e.embed("search email").unwrap();
        assert!((cosine(&q, &q) - 1.0).abs() < 1e-9);
        let near = cosine(&q, &e.embed("search emails").unwrap());
        let far = cosine(&q, &e.embed("delete todo").unwrap());
        assert!(near > far);
        assert!(e.embed("  ").is_err());
    }

    #[test]
    fn recall_shapes() {
        let index = ToolIndex::reference();
        let e = HashingEmbedder::default();
        let all = index.recall(&e, "anything at all", 21).unwrap();
        let mut names: Vec<_> = all.iter().map(|(n, _)| n.as_str()).collect();
        names.sort();
        let mut cat = crate::catalog::tool_names();
        cat.sort();
        assert_eq!(names, cat);
        let desc = &crate::catalog::require_tool("search_email").unwrap().description;
        assert_eq!(index.recall(&e, desc, 1).unwrap()[0].0, "search_email");
        assert_eq!(index.recall(&e, "x", 5).unwrap().len(), 5);
        let other = HashingEmbedder { dim: 64 };
        assert!(index.recall(&other, "x", 5).is_err());
    }

    #[test]
    fn pair_builders() {
        let s = IntentSample {
            query: "Search for the emails from Tom Li and then summarize those emails".into(),
            clauses: vec![
                ("Search for the emails from Tom Li".into(), "search_email".into()),
                ("summarize those emails".into(), "summary_email".into()),
            ],
        };
        let none = IntentSample { query: "hello".into(), clauses: vec![("hello".into(), NO_API.into())] };
        let (v1, skipped) = build_pairs_v1(&[s.clone(), none]);
        assert_eq!((v1.len(), skipped), (2, 1));
        assert!(build_pairs_v1(&[]).0.is_empty());
        let v2 = build_pairs_v2(std::slice::from_ref(&s), 3).unwrap();
        assert_eq!(v2[0].negatives.len(), 3);
        assert!(v2[0].negatives.iter().all(|n| !v2[0].positives.contains(n)));
        assert_eq!(v2, build_pairs_v2(&[s], 3).unwrap());
        let every = IntentSample {
            query: "everything".into(),
            clauses: crate::catalog::tool_names().into_iter().map(|n| (n.to_string(), n.to_string())).collect(),
        };
        assert!(build_pairs_v2(&[every], 1).is_err());
    }

    #[test]
    fn description_recall() {
        let index = ToolIndex::reference();
        let e = HashingEmbedder::default();
        let pairs = description_queries();
        let r5 = eval_recall(&index, &e, &pairs, 5).unwrap();
        assert!(r5 >= 0.95, "{r5}");
    }
}
