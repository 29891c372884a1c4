//! HTTP API.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | /events | one record or a list | `{accepted, queue_depth}` |
//! | POST | /ask | `{text}` | QA result |
//! | POST | /feedback | `{text}` | `{rules_version}` |
//! | GET | /tree?version= | | tree file text |
//! | GET | /rules | | `{version, rules}` |
//! | GET | /metrics | | counters |
//! | GET | /health | | `ok` |

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use emtree_core::events::EventRecord;
use emtree_core::tree::write_tree;

use crate::{Service, ServiceError};

#[derive(Deserialize)]
#[serde(untagged)]
enum EventsBody {
    One(EventRecord),
    Many(Vec<EventRecord>),
}

#[derive(Deserialize)]
pub struct TextBody {
    pub text: String,
}

#[derive(Deserialize)]
pub struct TreeQuery {
    pub version: Option<u64>,
}

#[derive(Serialize, Deserialize)]
pub struct RulesView {
    pub version: u64,
    pub rules: Vec<String>,
}

#[derive(Serialize, Deserialize)]
pub struct FeedbackAck {
    pub rules_version: u64,
}

fn error(status: StatusCode, msg: impl ToString) -> Response {
    (status, Json(serde_json::json!({ "error": msg.to_string() }))).into_response()
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::Event(_) | ServiceError::Rules(_) => StatusCode::BAD_REQUEST,
            ServiceError::Lm(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Stopped => StatusCode::SERVICE_UNAVAILABLE,
        };
        error(status, self)
    }
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/events", post(events))
        .route("/ask", post(ask))
        .route("/feedback", post(feedback))
        .route("/tree", get(tree))
        .route("/rules", get(rules))
        .route("/metrics", get(metrics))
        .route("/health", get(|| async { "ok" }))
        .with_state(service)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    service: Arc<Service>,
    addr: std::net::SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await
}

async fn events(State(s): State<Arc<Service>>, Json(body): Json<EventsBody>) -> Result<Response, ServiceError> {
    let records = match body {
        EventsBody::One(r) => vec![r],
        EventsBody::Many(v) => v,
    };
    Ok(Json(s.ingest(records)?).into_response())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, Response> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(IntoResponse::into_response),
        Err(e) => Err(error(StatusCode::INTERNAL_SERVER_ERROR, e)),
    }
}

async fn ask(State(s): State<Arc<Service>>, Json(body): Json<TextBody>) -> Response {
    if body.text.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "empty question");
    }
    match blocking(move || s.ask(&body.text)).await {
        Ok(r) => Json(r).into_response(),
        Err(resp) => resp,
    }
}

async fn feedback(State(s): State<Arc<Service>>, Json(body): Json<TextBody>) -> Response {
    match blocking(move || s.feedback(&body.text)).await {
        Ok(v) => Json(FeedbackAck { rules_version: v }).into_response(),
        Err(resp) => resp,
    }
}

async fn tree(State(s): State<Arc<Service>>, Query(q): Query<TreeQuery>) -> Response {
    let snap = match q.version {
        None => s.latest_snapshot(),
        Some(v) => match s.snapshot_version(v) {
            Some(t) => t,
            None => return error(StatusCode::NOT_FOUND, format!("version {v} is not kept")),
        },
    };
    let mut buf = Vec::new();
    if let Err(e) = write_tree(&snap, &mut buf) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e);
    }
    ([("content-type", "text/plain; charset=utf-8")], buf).into_response()
}

async fn rules(State(s): State<Arc<Service>>) -> Json<RulesView> {
    let r = s.rules();
    Json(RulesView { version: r.version(), rules: r.texts().into_iter().map(String::from).collect() })
}

async fn metrics(State(s): State<Arc<Service>>) -> Json<crate::Metrics> {
    Json(s.metrics())
}
