use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::CONTENT_TYPE;

use super::wire::{RequestBody, ResponseBody};
use super::{AssessmentRequest, Endpoint, EndpointConfig, Verdict, VlmError};

enum Failure {
    Transport(String),
    Malformed(String),
}

/// Endpoint reached by HTTP POST, retried with doubling backoff.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    name: String,
    config: EndpointConfig,
    client: Client,
}

impl HttpEndpoint {
    pub fn new(name: impl Into<String>, config: EndpointConfig) -> Result<Self, VlmError> {
        config.validate()?;
        let client = Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| VlmError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            name: name.into(),
            config,
            client,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn attempt(&self, body: &str) -> Result<ResponseBody, Failure> {
        let mut req = self
            .client
            .post(&self.config.url)
            .header(CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(token) = &self.config.bearer_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Failure::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Failure::Transport(format!("HTTP {status}")));
        }
        let bytes = resp
            .bytes()
            .map_err(|e| Failure::Transport(e.to_string()))?;
        ResponseBody::parse(&bytes).map_err(Failure::Malformed)
    }
}

impl Endpoint for HttpEndpoint {
    fn name(&self) -> &str {
        &self.name
    }

    fn assess(&self, request: &AssessmentRequest, request_id: &str) -> Result<Verdict, VlmError> {
        request.validate(self.config.max_payload_bytes)?;
        let body = serde_json::to_string(&RequestBody::encode(request, request_id))
            .map_err(|e| VlmError::InvalidRequest(e.to_string()))?;
        let total = 1 + self.config.max_retries;
        let mut last = Failure::Transport("no attempt made".into());
        for attempt in 1..=total {
            match self.attempt(&body) {
                Ok(r) => {
                    return Ok(Verdict {
                        accept: r.verdict,
                        model: r.model,
                        rationale: r.rationale,
                        attempts: attempt,
                    })
                }
                Err(f) => last = f,
            }
            if attempt < total {
                std::thread::sleep(self.config.backoff(attempt));
            }
        }
        Err(match last {
            Failure::Transport(last) => VlmError::Exhausted {
                attempts: total,
                last,
            },
            Failure::Malformed(message) => VlmError::Protocol {
                attempts: total,
                message,
            },
        })
    }
}
