use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use officeflow::datagen::{DatagenConfig, Flow};
use officeflow::scenarios::FaultPlan;
use officeflow::sim::{FaultMode, OfficeSim};
use officeflow::{Error, Result};
use officeflow_cli::commands::{self, DatagenOptions, EvalOptions, Suite};
use officeflow_cli::config::Config;
use officeflow_cli::service::{self, AppState};
use officeflow_cli::Pipeline;

#[derive(Parser)]
#[command(name = "officeflow", version, about = "Master/worker office assistant over a simulated office backend")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
    /// Replay a dataset through the pipeline and print the metric tables.
    Eval {
        #[arg(value_enum)]
        suite: Suite,
        /// JSONL dataset; generated when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = officeflow::eval::DEFAULT_REPETITIONS)]
        judge_reps: usize,
        /// Directory for report.txt and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate dialogue samples as JSONL.
    Datagen {
        /// full, transitions, email, schedule, todo, chat, single, multi or transition:<prev>-><cur>
        flow: String,
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// JSONL destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also export an annotation task document here.
        #[arg(long)]
        annotation: Option<PathBuf>,
        /// Also write the matching labeling config here.
        #[arg(long)]
        label_config: Option<PathBuf>,
    },
    /// Embed the catalog and save the tool index.
    IndexBuild {
        #[arg(long)]
        out: PathBuf,
        /// Embed names and descriptions only.
        #[arg(long)]
        no_params: bool,
    },
    /// Tool recall at k over description queries and generated test sets.
    RecallEval {
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run a built-in scenario script or a TOML script file.
    Scenario {
        script: String,
        /// Inject a fault on this api before its first expected step.
        #[arg(long)]
        fault_api: Option<String>,
        #[arg(long, value_enum, default_value = "fail-once")]
        fault_mode: FaultArg,
        /// Print the full report as JSON instead of the summary.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FaultArg {
    FailOnce,
    FailAlways,
    UnknownId,
}

impl From<FaultArg> for FaultMode {
    fn from(f: FaultArg) -> Self {
        match f {
            FaultArg::FailOnce => FaultMode::FailOnce,
            FaultArg::FailAlways => FaultMode::FailAlways,
            FaultArg::UnknownId => FaultMode::UnknownId,
        }
    }
}

fn serve(cfg: Config) -> Result<()> {
    let sim = Arc::new(OfficeSim::named(&cfg.fixture.name, cfg.fixture.seed)?);
    let orch = Arc::new(Pipeline::from_config(&cfg)?.orchestrator(sim));
    if let Some(p) = &cfg.service.state_path {
        if service::load_state(p, &orch)? {
            log::info!("restored state from {}", p.display());
        }
    }
    let app = service::router(AppState { orch, state_path: cfg.service.state_path.clone() }, cfg.service.admin);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let addr = format!("{}:{}", cfg.service.bind, cfg.service.port);
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| Error::Io(format!("{addr}: {e}")))?;
        log::info!("listening on {addr}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::Io(e.to_string()))
    })
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Serve { port } => {
            if let Some(p) = port {
                cfg.service.port = p;
            }
            drop(stdout);
            serve(cfg)?;
        }
        Command::Eval { suite, dataset, count, seed, noise, judge_reps, out } => {
            let opts = EvalOptions { dataset, count, seed, noise, judge_reps };
            let result = commands::eval(&cfg, suite, &opts)?;
            for n in &result.notices {
                eprintln!("note: {n}");
            }
            write!(stdout, "{}", result.report.to_text())?;
            if let Some(dir) = out {
                commands::write_report(&result.report, &dir)?;
            }
        }
        Command::Datagen { flow, count, seed, noise, out, annotation, label_config } => {
            let flow: Flow = flow.parse()?;
            let opts = DatagenOptions { config: DatagenConfig { flow, count, seed, noise }, out, annotation, label_config };
            let n = commands::datagen(&opts, &mut stdout)?;
            eprintln!("{n} samples");
        }
        Command::IndexBuild { out, no_params } => {
            let index = commands::index_build(&out, !no_params)?;
            writeln!(stdout, "{} tools, dimension {}, written to {}", index.entries.len(), index.dimension, out.display())?;
        }
        Command::RecallEval { k, count, seed } => {
            write!(stdout, "{}", commands::recall_eval(&cfg, k, count, seed)?.to_text())?;
        }
        Command::Scenario { script, fault_api, fault_mode, json } => {
            let fault = fault_api.map(|api| FaultPlan { api, mode: fault_mode.into() });
            let report = commands::scenario(&script, fault)?;
            if json {
                let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?;
                writeln!(stdout, "{text}")?;
            } else {
                write!(stdout, "{}", commands::scenario_text(&report))?;
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Usage(_) | Error::Parse { .. } | Error::UnknownFixture(_) | Error::UnknownTool(_) => 2,
                _ => 1,
            })
        }
    }
}
