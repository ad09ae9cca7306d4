//! HTTP client for remote cnle/1 evaluator servers.
//!
//! Transport failures and 5xx responses are retried with exponential
//! backoff; 4xx responses and protocol violations are permanent. When
//! configured, any remote failure falls back to the in-process mock.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use ureq::Agent;

use super::mock::evaluate_mock;
use super::wire::{parse_response, to_wire, EVALUATE_PATH};
use super::{validate_response, Evaluate, EvaluationRequest, EvaluationResponse};
use crate::config::{CnleConfig, FallbackKind};
use crate::{EngineError, Result};

pub struct RemoteEvaluator {
    agent: Agent,
    evaluate_url: String,
    retries: u32,
    fallback_mock: bool,
    backoff_base: Duration,
    next_id: AtomicU64,
}

impl RemoteEvaluator {
    pub fn new(endpoint: &str, timeout: Duration, retries: u32, fallback_mock: bool) -> Self {
        let agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        RemoteEvaluator {
            agent,
            evaluate_url: format!("{}{}", endpoint.trim_end_matches('/'), EVALUATE_PATH),
            retries,
            fallback_mock,
            backoff_base: Duration::from_millis(100),
            next_id: AtomicU64::new(0),
        }
    }

    pub fn from_config(cfg: &CnleConfig) -> Result<Self> {
        let endpoint = cfg
            .endpoint
            .as_deref()
            .ok_or_else(|| EngineError::Config("remote evaluator requires cnle_endpoint".into()))?;
        Ok(RemoteEvaluator::new(
            endpoint,
            Duration::from_millis(cfg.timeout_ms),
            cfg.retries,
            cfg.fallback == FallbackKind::Mock,
        ))
    }

    /// Shrinks the delay between retries (used by tests).
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    fn evaluate_remote(&self, request: &EvaluationRequest) -> Result<EvaluationResponse> {
        let request_id = format!("req-{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let body = serde_json::to_vec(&to_wire(request, &request_id))
            .map_err(|e| EngineError::Protocol(format!("serializing request: {e}")))?;

        let mut last_err = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                let backoff = self.backoff_base * 2u32.saturating_pow(attempt - 1);
                std::thread::sleep(backoff.min(Duration::from_secs(2)));
            }
            let sent = self
                .agent
                .post(&self.evaluate_url)
                .header("content-type", "application/json")
                .send(&body[..]);
            match sent {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = match resp.body_mut().read_to_string() {
                        Ok(t) => t,
                        Err(e) => {
                            last_err = format!("reading response body: {e}");
                            continue;
                        }
                    };
                    if (200..300).contains(&status) {
                        let parsed = parse_response(&text, &request_id)?;
                        return validate_response(request, parsed);
                    }
                    if (400..500).contains(&status) {
                        return Err(EngineError::Evaluator(format!(
                            "evaluator rejected request {request_id}: HTTP {status}: {}",
                            text.trim()
                        )));
                    }
                    last_err = format!("HTTP {status}");
                }
                Err(ureq::Error::BadUri(e)) => {
                    return Err(EngineError::Config(format!(
                        "invalid evaluator endpoint {}: {e}",
                        self.evaluate_url
                    )));
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(EngineError::Evaluator(format!(
            "no usable response from {} after {} attempt(s): {last_err}",
            self.evaluate_url,
            self.retries + 1
        )))
    }
}

impl Evaluate for RemoteEvaluator {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResponse> {
        match self.evaluate_remote(request) {
            Ok(resp) => Ok(resp),
            Err(e) if self.fallback_mock => match e {
                EngineError::Evaluator(_) | EngineError::Protocol(_) => {
                    log::warn!("remote evaluation failed ({e}); falling back to mock evaluator");
                    evaluate_mock(request)
                }
                other => Err(other),
            },
            Err(e) => Err(e),
        }
    }
}
