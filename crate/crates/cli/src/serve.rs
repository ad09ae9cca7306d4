//! Recommendation HTTP service over a frozen snapshot and trained model.
//!
//! Routes:
//! - `POST /v1/recommend` with `{"user_id": string, "k": integer}` →
//!   `{"user_id": .., "items": [{"id": .., "score": ..}, ..]}`
//! - `GET /v1/health` → `{"status":"ok"}`
//!
//! Unknown users map to 404, malformed bodies and `k = 0` to 400, and
//! internal pipeline failures to 500 labeled with the failing stage.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use cherryrec_core::pipeline::Engine;
use cherryrec_core::{EngineError, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecommendBody {
    user_id: String,
    k: usize,
    #[serde(default)]
    now: Option<i64>,
}

fn error_body(status: StatusCode, error: &str, detail: Option<String>) -> Response {
    let mut body = json!({ "error": error });
    if let Some(detail) = detail {
        body["detail"] = json!(detail);
    }
    (status, Json(body)).into_response()
}

async fn health() -> Response {
    (StatusCode::OK, Json(json!({ "status": "ok" }))).into_response()
}

async fn recommend(State(engine): State<Arc<Engine>>, body: Bytes) -> Response {
    let request: RecommendBody = match serde_json::from_slice(&body) {
        Ok(parsed) => parsed,
        Err(e) => {
            return error_body(StatusCode::BAD_REQUEST, "bad_request", Some(e.to_string()));
        }
    };
    if request.k == 0 {
        return error_body(StatusCode::BAD_REQUEST, "k_must_be_positive", None);
    }

    let user_id = request.user_id.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        engine.recommend(&request.user_id, request.k, request.now)
    })
    .await;

    match outcome {
        Ok(Ok(recommendations)) => {
            let items: Vec<serde_json::Value> = recommendations
                .iter()
                .map(|r| json!({ "id": r.news_id, "score": r.score }))
                .collect();
            (
                StatusCode::OK,
                Json(json!({ "user_id": user_id, "items": items })),
            )
                .into_response()
        }
        Ok(Err(EngineError::NotFound(_))) => {
            error_body(StatusCode::NOT_FOUND, "user_not_found", None)
        }
        Ok(Err(e)) => error_body(
            StatusCode::INTERNAL_SERVER_ERROR,
            e.stage(),
            Some(e.to_string()),
        ),
        Err(join_error) => error_body(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            Some(join_error.to_string()),
        ),
    }
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/v1/recommend", post(recommend))
        .route("/v1/health", get(health))
        .with_state(engine)
}

/// Binds `bind:port`, announces the bound address on stdout, and serves
/// until interrupted. Port 0 selects an ephemeral port.
pub fn run(engine: Engine, bind: &str, port: u16) -> Result<()> {
    let addr: SocketAddr = format!("{bind}:{port}")
        .parse()
        .map_err(|e| EngineError::Config(format!("invalid bind address {bind}:{port}: {e}")))?;
    let app = router(Arc::new(engine));
    let runtime = tokio::runtime::Runtime::new()
        .map_err(EngineError::io("starting async runtime".to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(EngineError::io(format!("binding {addr}")))?;
        let local = listener
            .local_addr()
            .map_err(EngineError::io("reading bound address".to_string()))?;
        announce(local);
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown_signal())
            .await
            .map_err(EngineError::io("serving HTTP".to_string()))
    })
}

pub(crate) fn announce(addr: SocketAddr) {
    use std::io::Write as _;
    println!("listening on http://{addr}");
    let _ = std::io::stdout().flush();
    log::info!("serving on {addr}");
}

pub(crate) async fn shutdown_signal() {
    if tokio::signal::ctrl_c().await.is_err() {
        // No signal handler available; serve until the process is killed.
        std::future::pending::<()>().await;
    }
}
