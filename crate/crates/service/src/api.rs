use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use esiqa_core::DisplayMode;

use crate::store::{Session, Store, SubmitError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub participant_id: String,
    /// `2d`, `3d_window` or `3d_immersive`.
    pub mode: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub participant_id: String,
    pub mode: DisplayMode,
    pub images: Vec<String>,
    pub cursor: usize,
    pub length: usize,
    pub created_at: String,
}

impl From<Session> for SessionView {
    fn from(s: Session) -> Self {
        Self {
            length: s.images.len(),
            session_id: s.session_id,
            participant_id: s.participant_id,
            mode: s.mode,
            images: s.images,
            cursor: s.cursor,
            created_at: s.created_at.to_rfc3339(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentImage {
    pub session_id: String,
    pub cursor: usize,
    pub length: usize,
    pub image_id: Option<String>,
    pub done: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitRating {
    pub image_id: String,
    pub score: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingAck {
    pub cursor: usize,
    pub next_image_id: Option<String>,
    pub done: bool,
}

#[derive(Debug, Deserialize)]
struct ViewQuery {
    view: Option<String>,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

type Shared = State<Arc<Store>>;

async fn create_session(
    State(store): Shared,
    body: Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()),
    };
    let mode: DisplayMode = match req.mode.parse() {
        Ok(m) => m,
        Err(_) => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("unknown mode `{}`", req.mode)),
    };
    match store.create_session(&req.participant_id, mode, req.seed) {
        Ok((s, created)) => {
            let status = if created { StatusCode::CREATED } else { StatusCode::OK };
            (status, Json(SessionView::from(s))).into_response()
        }
        Err(msg) => error(StatusCode::UNPROCESSABLE_ENTITY, msg),
    }
}

async fn current(State(store): Shared, Path(id): Path<String>) -> Response {
    match store.session(&id) {
        Some(s) => Json(CurrentImage {
            session_id: s.session_id.clone(),
            cursor: s.cursor,
            length: s.images.len(),
            image_id: s.current().map(String::from),
            done: s.current().is_none(),
        })
        .into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown session `{id}`")),
    }
}

async fn submit(
    State(store): Shared,
    Path(id): Path<String>,
    body: Result<Json<SubmitRating>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()),
    };
    // appends end in fsync; keep them off the async workers
    let res = tokio::task::spawn_blocking(move || store.submit(&id, &req.image_id, req.score)).await;
    match res {
        Ok(Ok(s)) => Json(RatingAck {
            cursor: s.cursor,
            next_image_id: s.current().map(String::from),
            done: s.current().is_none(),
        })
        .into_response(),
        Ok(Err(e)) => {
            let status = match e {
                SubmitError::UnknownSession(_) => StatusCode::NOT_FOUND,
                SubmitError::OutOfRange(_) => StatusCode::UNPROCESSABLE_ENTITY,
                SubmitError::OutOfOrder { .. } => StatusCode::CONFLICT,
                SubmitError::Persist(_) => StatusCode::INTERNAL_SERVER_ERROR,
            };
            error(status, e.to_string())
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn image(State(store): Shared, Path(id): Path<String>, Query(q): Query<ViewQuery>) -> Response {
    let Some(entry) = store.manifest().entry(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown image `{id}`"));
    };
    let path = match q.view.as_deref().unwrap_or("left") {
        "left" => &entry.left_path,
        "right" => &entry.right_path,
        other => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("view must be left or right, got `{other}`")),
    };
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let mime = match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        _ => "application/octet-stream",
    };
    match tokio::fs::read(path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime)], Body::from(bytes)).into_response(),
        Err(e) => error(StatusCode::NOT_FOUND, format!("{}: {e}", path.display())),
    }
}

async fn export(State(store): Shared) -> Response {
    match tokio::task::spawn_blocking(move || store.export()).await {
        Ok(Ok(bytes)) => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], Body::from(bytes)).into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/current", get(current))
        .route("/sessions/{id}/ratings", post(submit))
        .route("/images/{id}", get(image))
        .route("/export.csv", get(export))
        .with_state(store)
}
