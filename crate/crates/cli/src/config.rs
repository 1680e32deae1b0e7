//! One TOML file for every tunable, with environment overrides for ports and
//! endpoint URLs.
//!
//! ```toml
//! [service]
//! bind = "127.0.0.1"
//! port = 8080
//! state_path = "state.json"
//!
//! [pipeline]
//! k = 5
//! window = 10
//! max_retries = 1
//!
//! [fixture]
//! name = "F1"
//! seed = 0
//!
//! [backends]
//! rewrite = "endpoint"
//!
//! [endpoints.rewrite]
//! url = "http://127.0.0.1:9000/complete"
//! timeout_ms = 5000
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use officeflow::endpoint::Role;
use officeflow::orchestrator::PipelineConfig;
use officeflow::sim::FIXTURE_NAMES;
use officeflow::{Error, Result};
use serde::{Deserialize, Serialize};

pub const ENV_BIND: &str = "OFFICEFLOW_BIND";
pub const ENV_PORT: &str = "OFFICEFLOW_PORT";
pub const ENV_STATE: &str = "OFFICEFLOW_STATE";

/// `OFFICEFLOW_<ROLE>_URL`.
pub fn url_var(role: Role) -> String {
    format!("OFFICEFLOW_{}_URL", role.to_string().to_uppercase())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Sessions and simulator state are saved here after every change and
    /// restored on start.
    pub state_path: Option<PathBuf>,
    pub admin: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { bind: "127.0.0.1".into(), port: 8080, state_path: None, admin: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub name: String,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig { name: "F1".into(), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Reference,
    Endpoint,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub rewrite: Backend,
    pub plan: Backend,
    pub solve: Backend,
    pub judge: Backend,
}

impl Backends {
    pub fn get(&self, role: Role) -> Backend {
        match role {
            Role::Rewrite => self.rewrite,
            Role::Plan => self.plan,
            Role::Solve => self.solve,
            Role::Judge => self.judge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// A saved index to load instead of building one at start.
    pub index_path: Option<PathBuf>,
    pub with_params: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { index_path: None, with_params: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub service: ServiceConfig,
    pub pipeline: PipelineConfig,
    pub fixture: FixtureConfig,
    pub retrieval: RetrievalConfig,
    pub backends: Backends,
    pub endpoints: BTreeMap<Role, EndpointConfig>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let loc = e.span().map_or("config".to_string(), |r| format!("config byte {}", r.start));
            Error::parse(loc, e.message())
        })
    }

    /// Reads the file if given, else defaults; then applies the environment
    /// and validates.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::parse(&std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?)?,
            None => Config::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(b) = get(ENV_BIND) {
            self.service.bind = b;
        }
        if let Some(p) = get(ENV_PORT) {
            self.service.port = p.parse().map_err(|_| Error::Usage(format!("{ENV_PORT}={p:?} is not a port")))?;
        }
        if let Some(s) = get(ENV_STATE) {
            self.service.state_path = Some(s.into());
        }
        for role in [Role::Rewrite, Role::Plan, Role::Solve, Role::Judge] {
            if let Some(url) = get(&url_var(role)) {
                let timeout_ms = self.endpoints.get(&role).map_or(default_timeout(), |e| e.timeout_ms);
                self.endpoints.insert(role, EndpointConfig { url, timeout_ms });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.pipeline.k == 0 || self.pipeline.window == 0 {
            return Err(Error::Usage("pipeline.k and pipeline.window must be at least 1".into()));
        }
        if !FIXTURE_NAMES.contains(&self.fixture.name.as_str()) {
            return Err(Error::UnknownFixture(self.fixture.name.clone()));
        }
        if let Some((role, _)) = self.endpoints.iter().find(|(_, e)| e.timeout_ms == 0 || e.url.is_empty()) {
            return Err(Error::Usage(format!("endpoint for {role} needs a url and a nonzero timeout")));
        }
        Ok(())
    }

    /// The endpoint for a role set to `endpoint`; `None` for reference roles
    /// and for endpoint roles left without a URL.
    pub fn endpoint(&self, role: Role) -> Option<&EndpointConfig> {
        (self.backends.get(role) == Backend::Endpoint).then(|| self.endpoints.get(&role)).flatten()
    }
}
