//! Reference cnle/1 evaluator server.
//!
//! Replays the in-process mock scorer behind `POST /v1/evaluate`, so an
//! engine configured with the remote evaluator and pointed here reproduces
//! the mock pipeline bit for bit. Intended for integration tests and as a
//! wire-level reference for real evaluator servers.

use std::net::SocketAddr;

use axum::body::Bytes;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use cherryrec_core::cnle::mock::score_candidates;
use cherryrec_core::cnle::wire::{WireRequest, WireResponse, WireScore, EVALUATE_PATH, PROTOCOL};
use cherryrec_core::cnle::MAX_CANDIDATES;
use cherryrec_core::{EngineError, Result};

fn bad_request(detail: String) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({ "error": "bad_request", "detail": detail })),
    )
        .into_response()
}

async fn evaluate(body: Bytes) -> Response {
    let request: WireRequest = match serde_json::from_slice(&body) {
        Ok(parsed) => parsed,
        Err(e) => return bad_request(format!("unparseable request: {e}")),
    };
    if request.protocol != PROTOCOL {
        return bad_request(format!(
            "unsupported protocol {:?} (this server speaks {PROTOCOL:?})",
            request.protocol
        ));
    }
    if request.candidates.is_empty() {
        return bad_request("request carries no candidates".to_string());
    }
    if request.candidates.len() > MAX_CANDIDATES {
        return bad_request(format!(
            "{} candidates exceed the per-request cap of {MAX_CANDIDATES}",
            request.candidates.len()
        ));
    }

    let scores = score_candidates(&request.profile, &request.candidates);
    let chosen_id = scores
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .map(|(id, _)| id.clone())
        .expect("candidate list verified non-empty");
    let response = WireResponse {
        protocol: PROTOCOL.to_string(),
        request_id: request.request_id,
        scores: scores
            .into_iter()
            .map(|(id, score)| WireScore { id, score })
            .collect(),
        chosen_id,
    };
    (StatusCode::OK, Json(response)).into_response()
}

async fn health() -> Response {
    (
        StatusCode::OK,
        Json(json!({ "status": "ok", "protocol": PROTOCOL })),
    )
        .into_response()
}

pub fn router() -> Router {
    Router::new()
        .route(EVALUATE_PATH, post(evaluate))
        .route("/v1/health", get(health))
}

/// Binds `bind:port`, announces the bound address on stdout, and serves
/// until interrupted. Port 0 selects an ephemeral port.
pub fn run(bind: &str, port: u16) -> Result<()> {
    let addr: SocketAddr = format!("{bind}:{port}")
        .parse()
        .map_err(|e| EngineError::Config(format!("invalid bind address {bind}:{port}: {e}")))?;
    let runtime = tokio::runtime::Runtime::new()
        .map_err(EngineError::io("starting async runtime".to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(EngineError::io(format!("binding {addr}")))?;
        let local = listener
            .local_addr()
            .map_err(EngineError::io("reading bound address".to_string()))?;
        crate::serve::announce(local);
        axum::serve(listener, router())
            .with_graceful_shutdown(crate::serve::shutdown_signal())
            .await
            .map_err(EngineError::io("serving HTTP".to_string()))
    })
}
