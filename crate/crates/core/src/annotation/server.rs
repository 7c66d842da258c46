use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

use super::{DatasetRef, LabelSubmission, ServiceError, SessionStore};
use crate::acquisition::Selection;

/// Largest batch one request may ask for.
pub const MAX_BATCH: usize = 500;
const DEFAULT_BATCH: usize = 10;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) | ServiceError::UnknownDataset(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) | ServiceError::Closed(_) | ServiceError::Unlabeled(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        let mut body = json!({"error": self.code(), "detail": self.to_string()});
        if let ServiceError::Unlabeled(idx) = &self {
            body["indices"] = json!(idx);
        }
        (status, Json(body)).into_response()
    }
}

fn body_error(r: JsonRejection) -> Response {
    (r.status(), Json(json!({"error": "invalid_body", "detail": r.body_text()}))).into_response()
}

fn query_error(r: QueryRejection) -> Response {
    (r.status(), Json(json!({"error": "invalid_query", "detail": r.body_text()}))).into_response()
}

/// Body of `POST /sessions`. Exactly one of `indices` and `selection`
/// (acquisition output) must be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub dataset: DatasetRef,
    #[serde(default)]
    pub indices: Option<Vec<usize>>,
    #[serde(default)]
    pub selection: Option<Selection>,
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
    #[serde(default)]
    pub nonce: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitLabels {
    pub annotator: String,
    pub labels: Vec<LabelSubmission>,
}

#[derive(Debug, Deserialize)]
struct BatchQuery {
    annotator: String,
    size: Option<usize>,
}

/// One window as plotted by an annotator: `channels[c][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub index: usize,
    pub channels: Vec<Vec<f32>>,
    pub channel_names: Vec<String>,
    pub sample_rate_hz: f64,
    pub class_names: Vec<String>,
}

type Shared = Arc<SessionStore>;

// store calls fsync, so keep them off the async workers
async fn blocking<T: Send + 'static>(
    store: Shared,
    f: impl FnOnce(&SessionStore) -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn create(State(st): State<Shared>, body: Result<Json<CreateSession>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(r) => return body_error(r),
    };
    let indices = match (req.indices, req.selection) {
        (Some(i), None) => i,
        (None, Some(s)) => s.indices,
        _ => return ServiceError::BadRequest("give exactly one of indices or selection".into()).into_response(),
    };
    match blocking(st, move |s| s.create(req.dataset, indices, req.class_names, req.nonce)).await {
        Ok(v) => (StatusCode::CREATED, Json(v)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn show(State(st): State<Shared>, Path(id): Path<String>) -> Response {
    match st.view(&id) {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn batch(State(st): State<Shared>, Path(id): Path<String>, q: Result<Query<BatchQuery>, QueryRejection>) -> Response {
    let Query(q) = match q {
        Ok(q) => q,
        Err(r) => return query_error(r),
    };
    let size = q.size.unwrap_or(DEFAULT_BATCH);
    if size == 0 || size > MAX_BATCH {
        return ServiceError::BadRequest(format!("size must be in 1..={MAX_BATCH}")).into_response();
    }
    if q.annotator.trim().is_empty() {
        return ServiceError::BadRequest("annotator id must not be empty".into()).into_response();
    }
    let (dataset, indices, class_names) = match st.next_batch(&id, &q.annotator, size) {
        Ok(b) => b,
        Err(e) => return e.into_response(),
    };
    let entry = match st.datasets().get(&dataset) {
        Ok(e) => e,
        Err(e) => return e.into_response(),
    };
    let l = entry.data.window_length;
    let items: Vec<BatchItem> = indices
        .into_iter()
        .map(|i| BatchItem {
            index: i,
            channels: entry.data.window(i).chunks(l).map(<[f32]>::to_vec).collect(),
            channel_names: entry.channel_names.clone(),
            sample_rate_hz: entry.sample_rate_hz,
            class_names: class_names.clone(),
        })
        .collect();
    Json(items).into_response()
}

async fn labels(State(st): State<Shared>, Path(id): Path<String>, body: Result<Json<SubmitLabels>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(r) => return body_error(r),
    };
    match blocking(st, move |s| s.submit(&id, &req.annotator, &req.labels)).await {
        Ok(ack) => Json(ack).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn finalize(State(st): State<Shared>, Path(id): Path<String>) -> Response {
    match blocking(st, move |s| s.finalize(&id)).await {
        Ok(f) => Json(f).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn progress(State(st): State<Shared>, Path(id): Path<String>) -> Response {
    match st.progress(&id) {
        Ok(p) => Json(p).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn datasets(State(st): State<Shared>) -> Response {
    Json(st.datasets().refs()).into_response()
}

async fn fallback() -> Response {
    ServiceError::NotFound("no such route".into()).into_response()
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/datasets", get(datasets))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/batch", get(batch))
        .route("/sessions/{id}/labels", post(labels))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/progress", get(progress))
        .fallback(fallback)
        // the browser client is served from its own origin
        .layer(CorsLayer::permissive())
        .with_state(store)
}

/// Serve until ctrl-c.
pub async fn serve(addr: SocketAddr, store: Arc<SessionStore>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
