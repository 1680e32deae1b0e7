//! Result tables as aligned plain text and as JSON.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::judge::JudgeOutcome;
use super::runner::{RecallRow, Scores};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Score(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Score(v) => format!("{v:.4}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    /// Header groups spanning the columns below them, as (name, width).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<(String, usize)>,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(title: &str, columns: &[&str]) -> Self {
        Table {
            title: title.into(),
            groups: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(mut self, label: &str, cells: Vec<Cell>) -> Self {
        self.rows.push(Row { label: label.into(), cells });
        self
    }

    fn check(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Usage(format!("table {:?} has no metrics", self.title)));
        }
        if let Some(r) = self.rows.iter().find(|r| r.cells.len() != self.columns.len()) {
            return Err(Error::Usage(format!(
                "row {:?} has {} cells for {} columns",
                r.label,
                r.cells.len(),
                self.columns.len()
            )));
        }
        let spanned: usize = self.groups.iter().map(|g| g.1).sum();
        if !self.groups.is_empty() && spanned != self.columns.len() {
            return Err(Error::Usage(format!("table {:?} groups span {spanned} of {} columns", self.title, self.columns.len())));
        }
        Ok(())
    }

    fn render(&self) -> String {
        let mut label_w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.cells.iter().map(Cell::render).collect()).collect();
        let mut widths: Vec<usize> = self.columns.iter().map(String::len).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        // Widen the last column of a group until the group name fits.
        let mut at = 0;
        for (name, span) in &self.groups {
            let have: usize = widths[at..at + span].iter().sum::<usize>() + 2 * (span - 1);
            if name.len() > have {
                widths[at + span - 1] += name.len() - have;
            }
            at += span;
        }
        label_w += 2;
        let mut out = format!("{}\n", self.title);
        if !self.groups.is_empty() {
            let mut line = " ".repeat(label_w);
            let mut at = 0;
            for (name, span) in &self.groups {
                let w = widths[at..at + span].iter().sum::<usize>() + 2 * (span - 1);
                line.push_str(&format!("{name:<w$}  "));
                at += span;
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        let mut header = format!("{:<label_w$}", "");
        for (c, w) in self.columns.iter().zip(&widths) {
            header.push_str(&format!("{c:>w$}  "));
        }
        out.push_str(header.trim_end());
        out.push('\n');
        for (r, row) in self.rows.iter().zip(&cells) {
            let mut line = format!("{:<label_w$}", r.label);
            for (c, w) in row.iter().zip(&widths) {
                line.push_str(&format!("{c:>w$}  "));
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tables: Vec<Table>,
}

impl Report {
    pub fn new(tables: Vec<Table>) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::Usage("report needs at least one metric".into()));
        }
        for t in &tables {
            t.check()?;
        }
        Ok(Report { tables })
    }

    pub fn to_text(&self) -> String {
        self.tables.iter().map(Table::render).collect::<Vec<_>>().join("\n")
    }

    pub fn to_json(&self) -> serde_json::Value {
        let tables: Vec<serde_json::Value> = self
            .tables
            .iter()
            .map(|t| {
                let rows: Vec<serde_json::Value> = t
                    .rows
                    .iter()
                    .map(|r| {
                        let values: serde_json::Map<String, serde_json::Value> =
                            t.columns.iter().zip(&r.cells).map(|(c, v)| (c.clone(), json!(v))).collect();
                        json!({ "label": r.label, "values": values })
                    })
                    .collect();
                json!({ "title": t.title, "groups": t.groups, "columns": t.columns, "rows": rows })
            })
            .collect();
        json!({ "tables": tables })
    }
}

pub fn rewrite_table(label: &str, scores: &Scores, judge: Option<&JudgeOutcome>) -> Table {
    let judged = judge.map_or(Cell::Text("skipped".into()), |j| Cell::Text(j.display()));
    Table::new("Query rewrite", &["relate_acc", "ROUGE-L", "BLEU", "ground-truth"]).row(
        label,
        vec![Cell::Score(scores.relate_acc), Cell::Score(scores.rewrite_rouge_l), Cell::Score(scores.rewrite_bleu), judged],
    )
}

pub fn planner_table(label: &str, scores: &Scores) -> Table {
    Table::new("Planner", &["ROUGE", "sub_tasks_num-acc", "API-acc"])
        .row(label, vec![Cell::Score(scores.planner_rouge), Cell::Score(scores.sub_tasks_num_acc), Cell::Score(scores.api_acc)])
}

pub fn solver_table(label: &str, scores: &Scores) -> Table {
    Table::new("Solver", &["API-acc", "strict accuracy"])
        .row(label, vec![Cell::Score(scores.call_api_acc), Cell::Score(scores.strict_accuracy)])
}

pub fn recall_table(rows: &[RecallRow]) -> Table {
    let mut t = Table::new("Tool recall", &["top3", "top5", "top3", "top5"]);
    t.groups = vec![("Single-intent test set".into(), 2), ("Multi-intent test set".into(), 2)];
    for r in rows {
        t = t.row(&r.label, [r.single_top3, r.single_top5, r.multi_top3, r.multi_top5].map(Cell::Score).to_vec());
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores() -> Scores {
        Scores {
            samples: 1,
            turns: 1,
            relate_acc: 1.0,
            rewrite_rouge_l: 1.0,
            rewrite_bleu: 1.0,
            sub_tasks_num_acc: 0.5,
            api_acc: 0.75,
            planner_rouge: 0.9,
            strict_accuracy: 0.5,
            call_api_acc: 0.75,
        }
    }

    #[test]
    fn layouts() {
        let row = RecallRow { label: "hashing".into(), single_top3: 1.0, single_top5: 1.0, multi_top3: 0.5, multi_top5: 0.75 };
        let report = Report::new(vec![recall_table(&[row]), planner_table("reference", &scores())]).unwrap();
        let text = report.to_text();
        assert!(text.contains("Single-intent test set") && text.contains("Multi-intent test set"));
        assert!(text.contains("ROUGE  sub_tasks_num-acc  API-acc"));
        let j = report.to_json();
        assert_eq!(j["tables"][0]["columns"], json!(["top3", "top5", "top3", "top5"]));
        assert_eq!(j["tables"][1]["rows"][0]["values"]["API-acc"], json!(0.75));
    }

    #[test]
    fn empty_is_error() {
        assert!(Report::new(vec![]).is_err());
        assert!(Report::new(vec![Table::new("x", &["a"])]).is_err());
    }
}
