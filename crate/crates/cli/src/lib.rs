//! Command-line front end and HTTP service for the office assistant.

pub mod client;
pub mod commands;
pub mod config;
pub mod service;

use std::sync::Arc;
use std::time::Duration;

use officeflow::endpoint::{ModelClient, ModelPlanner, ModelRewriter, ModelSolver, Role};
use officeflow::orchestrator::{Orchestrator, PipelineConfig, Wps365Agent};
use officeflow::planner::{PlannerBackend, RulePlanner};
use officeflow::retrieval::{HashingEmbedder, ToolIndex};
use officeflow::rewrite::{RewriteBackend, RuleRewriter};
use officeflow::sim::OfficeSim;
use officeflow::solver::{RuleSolver, SolverBackend};
use officeflow::{catalog, Result};

use client::HttpModelClient;
use config::{Backend, Config};

/// The HTTP client for a role configured as `endpoint`, if it has a URL.
pub fn model_client(cfg: &Config, role: Role) -> Option<Arc<dyn ModelClient>> {
    cfg.endpoint(role)
        .map(|e| Arc::new(HttpModelClient::new(&e.url, Duration::from_millis(e.timeout_ms))) as Arc<dyn ModelClient>)
}

/// Backends and index shared by every orchestrator built from one config.
#[derive(Clone)]
pub struct Pipeline {
    pub rewriter: Arc<dyn RewriteBackend>,
    pub planner: Arc<dyn PlannerBackend>,
    pub solver: Arc<dyn SolverBackend>,
    pub index: ToolIndex,
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let rewriter: Arc<dyn RewriteBackend> = match cfg.backends.rewrite {
            Backend::Reference => Arc::new(RuleRewriter),
            Backend::Endpoint => Arc::new(ModelRewriter { client: model_client(cfg, Role::Rewrite) }),
        };
        let planner: Arc<dyn PlannerBackend> = match cfg.backends.plan {
            Backend::Reference => Arc::new(RulePlanner),
            Backend::Endpoint => Arc::new(ModelPlanner { client: model_client(cfg, Role::Plan) }),
        };
        let solver: Arc<dyn SolverBackend> = match cfg.backends.solve {
            Backend::Reference => Arc::new(RuleSolver),
            Backend::Endpoint => Arc::new(ModelSolver { client: model_client(cfg, Role::Solve) }),
        };
        let index = match &cfg.retrieval.index_path {
            Some(p) => ToolIndex::load(p)?,
            None => ToolIndex::build(&HashingEmbedder::default(), catalog::catalog(), cfg.retrieval.with_params)?,
        };
        Ok(Pipeline { rewriter, planner, solver, index, config: cfg.pipeline })
    }

    pub fn orchestrator(&self, sim: Arc<OfficeSim>) -> Orchestrator {
        let agent = Wps365Agent {
            planner: self.planner.clone(),
            solver: self.solver.clone(),
            embedder: Arc::new(HashingEmbedder::default()),
            index: self.index.clone(),
            k: self.config.k,
        };
        let o = Orchestrator::new(sim, self.rewriter.clone(), Arc::new(agent), self.config);
        o.register_stubs();
        o
    }
}
