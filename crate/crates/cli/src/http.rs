//! HTTP transport for a generation endpoint. The wire format is the request
//! struct serialized as JSON, answered by `{"text": ..., "tokens": ...}`.
//! Transient failures (transport errors, 5xx) are retried with doubling
//! backoff; client errors are not.

use std::time::Duration;

use riskroute_core::icl::{BackendError, LlmBackend, LlmRequest, LlmResponse};
use ureq::Agent;

pub const DEFAULT_ATTEMPTS: u32 = 3;
pub const DEFAULT_BACKOFF_MS: u64 = 100;

pub struct HttpBackend {
    url: String,
    token: Option<String>,
    agent: Agent,
    pub attempts: u32,
    pub backoff: Duration,
}

enum Failure {
    Transient(String),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(url: String, token: Option<String>) -> Self {
        let config = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build();
        HttpBackend {
            url,
            token,
            agent: config.into(),
            attempts: DEFAULT_ATTEMPTS,
            backoff: Duration::from_millis(DEFAULT_BACKOFF_MS),
        }
    }

    fn post_once(&self, request: &LlmRequest) -> Result<LlmResponse, Failure> {
        let mut call = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            call = call.header("authorization", format!("Bearer {token}"));
        }
        let mut response = call
            .send_json(request)
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if (500..600).contains(&status) {
            return Err(Failure::Transient(format!("server returned {status}")));
        }
        if status != 200 {
            return Err(Failure::Fatal(BackendError::Rejected(format!(
                "endpoint returned {status}"
            ))));
        }
        response
            .body_mut()
            .read_json::<LlmResponse>()
            .map_err(|e| Failure::Fatal(BackendError::Transport(format!("bad response body: {e}"))))
    }
}

impl LlmBackend for HttpBackend {
    fn generate(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        let mut wait = self.backoff;
        let mut last = String::new();
        for attempt in 0..self.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(wait);
                wait *= 2;
            }
            match self.post_once(request) {
                Ok(response) => return Ok(response),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(message)) => last = message,
            }
        }
        Err(BackendError::Transport(format!(
            "gave up after {} attempts: {last}",
            self.attempts.max(1)
        )))
    }
}
