//! HTTP model client: POSTs `{"role": ..., "prompt": ...}` and hands the
//! response body, unchanged, to the role's parser.

use std::time::Duration;

use officeflow::endpoint::{ModelClient, Role};
use officeflow::{Error, Result};
use serde_json::json;

pub struct HttpModelClient {
    agent: ureq::Agent,
    url: String,
}

impl HttpModelClient {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        HttpModelClient { agent, url: url.to_string() }
    }
}

impl ModelClient for HttpModelClient {
    fn complete(&self, role: Role, prompt: &str) -> Result<String> {
        let body = json!({ "role": role, "prompt": prompt }).to_string();
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body.as_str())
            .map_err(|e| Error::Endpoint(format!("{}: {e}", self.url)))?;
        resp.body_mut().read_to_string().map_err(|e| Error::Endpoint(format!("{}: {e}", self.url)))
    }
}
