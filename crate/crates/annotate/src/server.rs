//! HTTP routes over a [`Store`].

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::{ServeDir, ServeFile};
use typescore::extraction::media_type_for;
use typescore::jsonl;
use typescore::meta_eval::{Answer, Question};

use crate::store::{AnnotateError, Store};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub store_dir: PathBuf,
    pub images_dir: PathBuf,
    /// Directory holding the built UI (`index.html` and assets).
    pub ui_dir: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl IntoResponse for AnnotateError {
    fn into_response(self) -> Response {
        let (status, code) = match &self {
            AnnotateError::GoldSetMissing => (StatusCode::CONFLICT, "gold_set_missing"),
            AnnotateError::NotQualified(_) => (StatusCode::FORBIDDEN, "not_qualified"),
            AnnotateError::NoTasksRemaining(_) => (StatusCode::NOT_FOUND, "no_tasks_remaining"),
            AnnotateError::UnknownPair(_) => (StatusCode::NOT_FOUND, "unknown_pair"),
            AnnotateError::DuplicateJudgment { .. } => (StatusCode::CONFLICT, "duplicate_judgment"),
            AnnotateError::StaleTask { .. } => (StatusCode::CONFLICT, "stale_task"),
            AnnotateError::IncompleteAnswers(_) => (StatusCode::UNPROCESSABLE_ENTITY, "incomplete_answers"),
            AnnotateError::Jsonl(_) | AnnotateError::Io { .. } | AnnotateError::Invalid(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        let body = ErrorBody {
            error: code,
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct QualificationRequest {
    pub answers: BTreeMap<String, Answer>,
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub rater: String,
}

#[derive(Debug, Deserialize)]
pub struct JudgmentRequest {
    pub rater_id: String,
    /// As shown: LEFT and RIGHT refer to the on-screen positions.
    pub answers: BTreeMap<Question, Answer>,
}

#[derive(Debug, Deserialize)]
pub struct ExportQuery {
    #[serde(default)]
    pub format: Option<String>,
}

#[derive(Clone)]
struct AppState {
    store: Arc<Store>,
    images_dir: Arc<PathBuf>,
}

/// Runs blocking store work (it fsyncs the log) off the async workers.
async fn blocking<T: Send + 'static>(
    store: Arc<Store>,
    f: impl FnOnce(&Store) -> Result<T, AnnotateError> + Send + 'static,
) -> Result<T, AnnotateError> {
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| AnnotateError::Invalid(format!("store task panicked: {e}")))?
}

async fn gold(State(AppState { store, .. }): State<AppState>) -> impl IntoResponse {
    Json(store.gold_questions())
}

async fn qualify(
    State(AppState { store, .. }): State<AppState>,
    Path(rater): Path<String>,
    Json(req): Json<QualificationRequest>,
) -> Result<impl IntoResponse, AnnotateError> {
    let record = blocking(store, move |s| s.qualify_rater(&rater, &req.answers)).await?;
    Ok(Json(record))
}

async fn rater(State(AppState { store, .. }): State<AppState>, Path(rater): Path<String>) -> Result<impl IntoResponse, AnnotateError> {
    store
        .rater(&rater)
        .map(Json)
        .ok_or(AnnotateError::NotQualified(rater))
}

async fn next_task(State(AppState { store, .. }): State<AppState>, Query(q): Query<NextQuery>) -> Result<impl IntoResponse, AnnotateError> {
    let task = blocking(store, move |s| s.next_task(&q.rater)).await?;
    Ok(Json(task))
}

async fn submit(
    State(AppState { store, .. }): State<AppState>,
    Path(pair): Path<String>,
    Json(req): Json<JudgmentRequest>,
) -> Result<impl IntoResponse, AnnotateError> {
    let state = blocking(store, move |s| s.submit_judgment(&req.rater_id, &pair, &req.answers)).await?;
    Ok(Json(state))
}

async fn task_state(State(AppState { store, .. }): State<AppState>, Path(pair): Path<String>) -> Result<impl IntoResponse, AnnotateError> {
    store
        .task_state(&pair)
        .map(Json)
        .ok_or(AnnotateError::UnknownPair(pair))
}

async fn export(State(AppState { store, .. }): State<AppState>, Query(q): Query<ExportQuery>) -> Response {
    let pairs = store.export_annotations();
    if q.format.as_deref() == Some("jsonl") {
        ([(header::CONTENT_TYPE, "application/x-ndjson")], jsonl::to_string(&pairs)).into_response()
    } else {
        Json(pairs).into_response()
    }
}

const PLACEHOLDER: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>typescore annotation</title></head>
<body>
<h1>typescore annotation service</h1>
<p>No UI bundle is configured. The JSON API is available:</p>
<ul>
<li>GET /gold</li>
<li>POST /raters/{id}/qualification</li>
<li>GET /tasks/next?rater={id}</li>
<li>POST /tasks/{pair_id}/judgments</li>
<li>GET /export</li>
</ul>
</body></html>
";

async fn placeholder() -> Html<&'static str> {
    Html(PLACEHOLDER)
}

async fn image(
    State(AppState { store, images_dir }): State<AppState>,
    Path(image_id): Path<String>,
) -> Response {
    let Some(rel) = store.image_path(&image_id) else {
        return StatusCode::NOT_FOUND.into_response();
    };
    let path = images_dir.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => {
            ([(header::CONTENT_TYPE, media_type_for(&path))], bytes).into_response()
        }
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

/// Builds the application. Images are served read-only by id, so file
/// paths (which often name the model) never reach the browser.
pub fn router(store: Arc<Store>, images_dir: PathBuf, ui_dir: Option<PathBuf>) -> Router {
    let state = AppState {
        store,
        images_dir: Arc::new(images_dir),
    };
    let api = Router::new()
        .route("/gold", get(gold))
        .route("/raters/{id}", get(rater))
        .route("/raters/{id}/qualification", post(qualify))
        .route("/tasks/next", get(next_task))
        .route("/tasks/{pair_id}", get(task_state))
        .route("/tasks/{pair_id}/judgments", post(submit))
        .route("/export", get(export))
        .route("/images/{image_id}", get(image))
        .with_state(state);
    match ui_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)))
        }
        None => api.route("/", get(placeholder)),
    }
}

/// Opens the store and serves until Ctrl-C.
pub async fn serve(cfg: ServeConfig) -> Result<(), AnnotateError> {
    let store = Arc::new(Store::open(&cfg.store_dir, cfg.seed)?);
    let app = router(store, cfg.images_dir, cfg.ui_dir);
    let io = |source| AnnotateError::Io {
        path: PathBuf::from(cfg.addr.to_string()),
        source,
    };
    let listener = tokio::net::TcpListener::bind(cfg.addr).await.map_err(io)?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(io)
}
