use std::io::Read;
use std::time::Duration;

use super::{wire, Backend, BackendError, BackendRequest, BackendResponse};

pub const BACKEND_URL_ENV: &str = "LATTE_BACKEND_URL";

/// Blocking JSON-over-HTTP client. Safe to share between threads.
#[derive(Clone, Debug)]
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_timeout(base_url, Duration::from_secs(300))
    }

    pub fn with_timeout(base_url: impl Into<String>, timeout: Duration) -> Self {
        let base_url = base_url.into().trim_end_matches('/').to_string();
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        HttpBackend { base_url, agent }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }
}

fn read_body(resp: ureq::Response) -> Result<Vec<u8>, BackendError> {
    let mut body = Vec::new();
    resp.into_reader()
        .take(256 << 20)
        .read_to_end(&mut body)
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    Ok(body)
}

impl Backend for HttpBackend {
    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let role = request.role();
        let url = format!("{}{}", self.base_url, role.endpoint());
        let payload = wire::request_to_json(request)?;
        match self.agent.post(&url).send_json(payload) {
            Ok(resp) => {
                let body = read_body(resp)?;
                wire::response_from_json(role, &body)
            }
            Err(ureq::Error::Status(code, resp)) => {
                let body = read_body(resp)?;
                Err(wire::error_from_json(code, &body))
            }
            Err(ureq::Error::Transport(t)) => Err(BackendError::Transport(t.to_string())),
        }
    }
}
