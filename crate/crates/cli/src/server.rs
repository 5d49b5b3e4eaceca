//! HTTP API over a [`ReviewStore`], plus static hosting of the review UI.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::{ServeDir, ServeFile};
use vlf_core::metrics::{Criterion, Judgment};
use vlf_core::pipeline::{ReviewError, ReviewStore};

type Store = Arc<ReviewStore>;

/// Routes under `/api`; every other path is served from `static_dir` when
/// given, with `index.html` as the fallback document.
pub fn router(store: Store, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/samples/next", get(next_sample))
        .route("/api/judgments", post(post_judgment))
        .route("/api/summary", get(summary))
        .with_state(store);
    match static_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)))
        }
        None => api,
    }
}

fn error(status: StatusCode, body: serde_json::Value) -> Response {
    (status, Json(body)).into_response()
}

async fn health(State(store): State<Store>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "samples": store.samples().len(),
        "judgments": store.judgments().len(),
    }))
}

#[derive(Deserialize)]
struct NextQuery {
    #[serde(default)]
    annotator: String,
}

async fn next_sample(State(store): State<Store>, Query(q): Query<NextQuery>) -> Response {
    if q.annotator.trim().is_empty() {
        return error(
            StatusCode::BAD_REQUEST,
            json!({ "error": "missing `annotator` query parameter" }),
        );
    }
    match store.next_for(&q.annotator) {
        Some(sample) => Json(sample.clone()).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

/// Wire form of a judgment: the criterion is kept as text so an unknown
/// name can be answered with the allowed set.
#[derive(Deserialize)]
struct JudgmentBody {
    sample_id: String,
    annotator_id: String,
    criterion: String,
    label: String,
    #[serde(default)]
    timestamp: Option<u64>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

async fn post_judgment(State(store): State<Store>, body: Bytes) -> Response {
    let body: JudgmentBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => {
            return error(
                StatusCode::BAD_REQUEST,
                json!({ "error": format!("malformed judgment: {e}") }),
            )
        }
    };
    let Ok(criterion) = body.criterion.parse::<Criterion>() else {
        let allowed: Vec<&str> = Criterion::ALL.iter().map(|c| c.as_str()).collect();
        return error(
            StatusCode::UNPROCESSABLE_ENTITY,
            json!({ "error": format!("unknown criterion `{}`", body.criterion), "allowed": allowed }),
        );
    };
    let judgment = Judgment {
        sample_id: body.sample_id,
        annotator_id: body.annotator_id,
        criterion,
        label: body.label,
        timestamp: body.timestamp.unwrap_or_else(now_ms),
    };
    let stored = judgment.clone();
    // The store does blocking file I/O under its lock.
    let result = tokio::task::spawn_blocking(move || store.submit(judgment)).await;
    match result {
        Ok(Ok(())) => (StatusCode::CREATED, Json(stored)).into_response(),
        Ok(Err(e)) => review_error(e),
        Err(e) => error(
            StatusCode::INTERNAL_SERVER_ERROR,
            json!({ "error": e.to_string() }),
        ),
    }
}

fn review_error(e: ReviewError) -> Response {
    let message = e.to_string();
    match e {
        ReviewError::UnknownSample(_) => error(StatusCode::NOT_FOUND, json!({ "error": message })),
        ReviewError::Invalid {
            criterion, allowed, ..
        } => error(
            StatusCode::UNPROCESSABLE_ENTITY,
            json!({ "error": message, "criterion": criterion, "allowed": allowed }),
        ),
        ReviewError::Duplicate { .. } => error(StatusCode::CONFLICT, json!({ "error": message })),
        ReviewError::Store(_) => error(
            StatusCode::INTERNAL_SERVER_ERROR,
            json!({ "error": message }),
        ),
    }
}

async fn summary(State(store): State<Store>) -> Response {
    match store.summary() {
        Ok(report) => Json(report).into_response(),
        Err(e) => error(
            StatusCode::INTERNAL_SERVER_ERROR,
            json!({ "error": e.to_string() }),
        ),
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(
    store: Store,
    static_dir: Option<PathBuf>,
    addr: std::net::SocketAddr,
) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "review service listening on http://{}",
        listener.local_addr()?
    );
    axum::serve(listener, router(store, static_dir)).await?;
    Ok(())
}
