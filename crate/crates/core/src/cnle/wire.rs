//! The cnle/1 wire protocol: JSON bodies exchanged with evaluator servers.
//!
//! Request:  POST `<endpoint>/v1/evaluate` with
//! `{"protocol":"cnle/1","request_id":...,"task":...,"prompt":...,"profile":...,"candidates":[{"id","title"},..]}`.
//! Response: `{"protocol":"cnle/1","request_id":...,"scores":[{"id","score"},..],"chosen_id":...}`.
//! Status 200 = success, 4xx = permanent request fault, 5xx/timeout = retryable.

use serde::{Deserialize, Serialize};

use super::{CandidateRef, EvaluationRequest, EvaluationResponse};
use crate::{EngineError, Result};

pub const PROTOCOL: &str = "cnle/1";
pub const EVALUATE_PATH: &str = "/v1/evaluate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub protocol: String,
    pub request_id: String,
    pub task: String,
    pub prompt: String,
    pub profile: String,
    pub candidates: Vec<CandidateRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireScore {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub protocol: String,
    pub request_id: String,
    pub scores: Vec<WireScore>,
    pub chosen_id: String,
}

/// Packages an in-memory request for transmission.
pub fn to_wire(request: &EvaluationRequest, request_id: &str) -> WireRequest {
    WireRequest {
        protocol: PROTOCOL.to_string(),
        request_id: request_id.to_string(),
        task: request.task.wire_name().to_string(),
        prompt: request.prompt.clone(),
        profile: request.profile_summary.clone(),
        candidates: request.candidates.clone(),
    }
}

/// Parses a response body and checks the protocol envelope (protocol tag and
/// request id echo). Score semantics are checked later by the shared
/// response validator.
pub fn parse_response(body: &str, expected_request_id: &str) -> Result<EvaluationResponse> {
    let wire: WireResponse = serde_json::from_str(body)
        .map_err(|e| EngineError::Protocol(format!("unparseable response body: {e}")))?;
    if wire.protocol != PROTOCOL {
        return Err(EngineError::Protocol(format!(
            "unexpected protocol {:?} (expected {PROTOCOL:?})",
            wire.protocol
        )));
    }
    if wire.request_id != expected_request_id {
        return Err(EngineError::Protocol(format!(
            "response for request {:?} does not match sent id {:?}",
            wire.request_id, expected_request_id
        )));
    }
    Ok(EvaluationResponse {
        scores: wire.scores.into_iter().map(|s| (s.id, s.score)).collect(),
        chosen_id: wire.chosen_id,
    })
}
