//! Subcommand bodies, kept free of argument parsing so tests can call them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use officeflow::datagen::annotation::{export_annotation, LABEL_CONFIG};
use officeflow::datagen::{coverage, generate, read_jsonl, write_jsonl, DatagenConfig, DialogueSample, Flow};
use officeflow::endpoint::{ModelJudge, Role};
use officeflow::eval::report::{planner_table, recall_table, rewrite_table, solver_table, Cell, Table};
use officeflow::eval::runner::{recall_row, recall_sets};
use officeflow::eval::{judge_consistency, replay, JudgeOutcome, Report, SlotJudge};
use officeflow::retrieval::{description_queries, eval_recall, HashingEmbedder, ToolIndex};
use officeflow::scenarios::{run_script, FaultPlan, ScenarioReport, ScenarioScript};
use officeflow::{catalog, Error, Result};

use crate::config::{Backend, Config};
use crate::{model_client, Pipeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Rewrite,
    Planner,
    Solver,
    Recall,
    All,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// A JSONL dataset; generated from `count`, `seed` and `noise` if absent.
    pub dataset: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    pub noise: f64,
    pub judge_reps: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { dataset: None, count: 500, seed: 1, noise: 0.0, judge_reps: officeflow::eval::DEFAULT_REPETITIONS }
    }
}

pub struct EvalOutput {
    pub report: Report,
    /// Fallbacks and skipped metrics worth telling the user about.
    pub notices: Vec<String>,
}

fn load_samples(opts: &EvalOptions) -> Result<Vec<DialogueSample>> {
    let samples = match &opts.dataset {
        Some(p) => {
            let f = File::open(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            read_jsonl(BufReader::new(f))?
        }
        None => generate(&DatagenConfig { flow: Flow::Full, count: opts.count, seed: opts.seed, noise: opts.noise })?,
    };
    if samples.is_empty() {
        return Err(Error::Usage("the evaluation set has no samples".into()));
    }
    Ok(samples)
}

fn judge(cfg: &Config, pairs: &[(String, String)], reps: usize) -> Result<JudgeOutcome> {
    match cfg.backends.judge {
        Backend::Reference => judge_consistency(pairs, &SlotJudge, reps),
        Backend::Endpoint => match model_client(cfg, Role::Judge) {
            Some(client) => judge_consistency(pairs, &ModelJudge { client }, reps),
            None => Ok(JudgeOutcome::Skipped { judge: "endpoint".into(), notice: "judge: no endpoint configured".into() }),
        },
    }
}

fn recall_tables(cfg: &Config, samples: &[DialogueSample], seed: u64) -> Result<Table> {
    let (single, multi) = recall_sets(samples, seed)?;
    let pipeline = Pipeline::from_config(cfg)?;
    let e = HashingEmbedder::default();
    let names_only = ToolIndex::build(&e, catalog::catalog(), false)?;
    let rows = [
        recall_row("configured index", &pipeline.index, &e, &single, &multi)?,
        recall_row("names and descriptions only", &names_only, &e, &single, &multi)?,
    ];
    Ok(recall_table(&rows))
}

/// Replays a dataset through the configured pipeline and scores the suite.
pub fn eval(cfg: &Config, suite: Suite, opts: &EvalOptions) -> Result<EvalOutput> {
    let samples = load_samples(opts)?;
    let mut notices = Vec::new();
    let mut tables = Vec::new();
    if suite != Suite::Recall {
        let pipeline = Pipeline::from_config(cfg)?;
        let run = replay(&samples, &cfg.fixture.name, cfg.pipeline.window, |sim| pipeline.orchestrator(sim))?;
        let scores = run.scores()?;
        let label = format!("{} samples, {} turns", scores.samples, scores.turns);
        let failed = run.outcomes.iter().filter(|o| o.error.is_some()).count();
        if failed > 0 {
            notices.push(format!("{failed} turns failed during replay"));
        }
        if matches!(suite, Suite::Rewrite | Suite::All) {
            let outcome = judge(cfg, &run.rewrite_pairs(), opts.judge_reps)?;
            if let JudgeOutcome::Skipped { notice, .. } = &outcome {
                notices.push(notice.clone());
            }
            tables.push(rewrite_table(&label, &scores, Some(&outcome)));
        }
        if matches!(suite, Suite::Planner | Suite::All) {
            tables.push(planner_table(&label, &scores));
        }
        if matches!(suite, Suite::Solver | Suite::All) {
            tables.push(solver_table(&label, &scores));
        }
    }
    if matches!(suite, Suite::Recall | Suite::All) {
        tables.push(recall_tables(cfg, &samples, opts.seed)?);
    }
    Ok(EvalOutput { report: Report::new(tables)?, notices })
}

/// Writes `report.txt` and `report.json` into `dir`, creating it.
pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.txt"), report.to_text())?;
    let json = serde_json::to_string_pretty(&report.to_json()).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DatagenOptions {
    pub config: DatagenConfig,
    /// JSONL destination; stdout if absent.
    pub out: Option<PathBuf>,
    pub annotation: Option<PathBuf>,
    pub label_config: Option<PathBuf>,
}

/// Generates samples and writes them out; returns how many were written.
pub fn datagen(opts: &DatagenOptions, stdout: &mut dyn Write) -> Result<usize> {
    let samples = generate(&opts.config)?;
    match &opts.out {
        Some(p) => {
            let f = File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            let mut w = BufWriter::new(f);
            write_jsonl(&samples, &mut w)?;
            w.flush()?;
        }
        None => write_jsonl(&samples, &mut *stdout)?,
    }
    if let Some(p) = &opts.annotation {
        std::fs::write(p, export_annotation(&samples)? + "\n")?;
    }
    if let Some(p) = &opts.label_config {
        std::fs::write(p, LABEL_CONFIG)?;
    }
    for (rule, n) in coverage(&samples) {
        log::info!("{rule}: {n} distinct combinations");
    }
    Ok(samples.len())
}

pub fn index_build(out: &Path, with_params: bool) -> Result<ToolIndex> {
    let index = ToolIndex::build(&HashingEmbedder::default(), catalog::catalog(), with_params)?;
    index.save(out)?;
    Ok(index)
}

/// Top-k recall over description-derived queries plus the single and
/// multi-intent recall table over a generated set.
pub fn recall_eval(cfg: &Config, k: usize, count: usize, seed: u64) -> Result<Report> {
    let pipeline = Pipeline::from_config(cfg)?;
    let e = HashingEmbedder::default();
    let pairs = description_queries();
    let top = eval_recall(&pipeline.index, &e, &pairs, k)?;
    let col = format!("top{k}");
    let descriptions = Table::new("Description queries", &["queries", &col])
        .row("configured index", vec![Cell::Text(pairs.len().to_string()), Cell::Score(top)]);
    let samples = generate(&DatagenConfig { flow: Flow::Full, count, seed, noise: 0.0 })?;
    Report::new(vec![descriptions, recall_tables(cfg, &samples, seed)?])
}

/// A built-in script name or a path to a TOML script.
pub fn load_script(name_or_path: &str) -> Result<ScenarioScript> {
    let p = Path::new(name_or_path);
    if p.is_file() {
        ScenarioScript::parse(&std::fs::read_to_string(p)?)
    } else {
        ScenarioScript::builtin(name_or_path)
    }
}

pub fn scenario(name_or_path: &str, fault: Option<FaultPlan>) -> Result<ScenarioReport> {
    let script = load_script(name_or_path)?;
    if let Some(f) = &fault {
        catalog::require_tool(&f.api)?;
    }
    run_script(&script, fault.as_ref())
}

/// The summary followed by each step's store changes.
pub fn scenario_text(report: &ScenarioReport) -> String {
    let mut out = report.summary();
    for s in report.steps.iter().filter(|s| !s.diff.is_empty()) {
        out.push_str(&format!("changes after {:?}\n", s.query));
        for (label, part) in [("added", &s.diff.added), ("removed", &s.diff.removed), ("changed", &s.diff.changed)] {
            for (store, ids) in part {
                out.push_str(&format!("  {label} {store}: {}\n", ids.join(", ")));
            }
        }
    }
    out
}
