//! HTTP routes for interactive sessions.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mgrl::episodes::Stroke;
use mgrl::index::Hit;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::engine::Engine;

pub const DEFAULT_IDLE: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: code.to_string(),
                detail: detail.into(),
            },
        }
    }

    fn malformed(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_stroke", detail)
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "unknown_session",
            format!("no session `{id}`"),
        )
    }

    fn internal(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeBody {
    pub width: f64,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultItem {
    pub photo_id: String,
    pub distance: f64,
    pub levels: [f64; 3],
}

impl From<Hit> for ResultItem {
    fn from(h: Hit) -> Self {
        ResultItem {
            photo_id: h.photo_id,
            distance: h.distance,
            levels: h.levels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResults {
    pub stage: usize,
    pub results: Vec<ResultItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigBody {
    pub topk: usize,
    pub canvas: usize,
    pub gallery_size: usize,
}

struct Session {
    strokes: Vec<Stroke>,
    last: Vec<ResultItem>,
}

impl Session {
    fn results(&self) -> StageResults {
        StageResults {
            stage: self.strokes.len(),
            results: self.last.clone(),
        }
    }
}

struct SessionSlot {
    // Held across the retrieval so one session's requests apply in order.
    session: Arc<tokio::sync::Mutex<Session>>,
    touched: Instant,
}

/// Shared service state. A service whose model failed to load still
/// answers, with `service_not_ready` on every retrieval route.
pub struct AppState {
    engine: Result<Arc<Engine>, String>,
    sessions: Mutex<HashMap<String, SessionSlot>>,
    idle: Duration,
}

impl AppState {
    pub fn ready(engine: Engine) -> Self {
        Self::with_engine(Ok(Arc::new(engine)))
    }

    pub fn not_ready(reason: impl Into<String>) -> Self {
        Self::with_engine(Err(reason.into()))
    }

    fn with_engine(engine: Result<Arc<Engine>, String>) -> Self {
        AppState {
            engine,
            sessions: Mutex::new(HashMap::new()),
            idle: DEFAULT_IDLE,
        }
    }

    pub fn with_idle(mut self, idle: Duration) -> Self {
        self.idle = idle;
        self
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session map poisoned").len()
    }

    /// Drops sessions idle for longer than the configured limit.
    pub fn purge_idle(&self) {
        let now = Instant::now();
        self.sessions
            .lock()
            .expect("session map poisoned")
            .retain(|_, s| now.duration_since(s.touched) <= self.idle);
    }

    fn engine(&self) -> Result<Arc<Engine>, ApiError> {
        self.engine.as_ref().map(Arc::clone).map_err(|why| {
            ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "service_not_ready",
                why.clone(),
            )
        })
    }

    fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        let now = Instant::now();
        let mut map = self.sessions.lock().expect("session map poisoned");
        let expired = match map.get_mut(id) {
            None => return Err(ApiError::unknown_session(id)),
            Some(slot) if now.duration_since(slot.touched) > self.idle => true,
            Some(slot) => {
                slot.touched = now;
                return Ok(Arc::clone(&slot.session));
            }
        };
        if expired {
            map.remove(id);
        }
        Err(ApiError::unknown_session(id))
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route(
            "/api/sessions/{id}",
            get(get_session).delete(delete_session),
        )
        .route("/api/sessions/{id}/strokes", post(submit_stroke))
        .route("/api/sessions/{id}/undo", post(undo_stroke))
        .route("/api/photos/{id}", get(get_photo))
        .route("/api/config", get(get_config))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn create_session(State(state): State<Arc<AppState>>) -> Result<impl IntoResponse, ApiError> {
    state.engine()?;
    state.purge_idle();
    let id = format!("{:032x}", rand::random::<u128>());
    let now = Instant::now();
    let slot = SessionSlot {
        session: Arc::new(tokio::sync::Mutex::new(Session {
            strokes: Vec::new(),
            last: Vec::new(),
        })),
        touched: now,
    };
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .insert(id.clone(), slot);
    Ok((StatusCode::CREATED, Json(SessionCreated { session_id: id })))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<StageResults>, ApiError> {
    let session = state.session(&id)?;
    let guard = session.lock().await;
    Ok(Json(guard.results()))
}

async fn delete_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    state.session(&id)?;
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

/// Re-runs retrieval on `strokes` off the async workers.
async fn retrieve(engine: Arc<Engine>, strokes: Vec<Stroke>) -> Result<Vec<ResultItem>, ApiError> {
    let hits = tokio::task::spawn_blocking(move || engine.retrieve(&strokes))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(hits.into_iter().map(ResultItem::from).collect())
}

async fn submit_stroke(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<StrokeBody>, JsonRejection>,
) -> Result<Json<StageResults>, ApiError> {
    let engine = state.engine()?;
    let session = state.session(&id)?;
    let Json(body) = body.map_err(|e| ApiError::malformed(e.body_text()))?;
    let points = body.points.iter().map(|&[x, y]| (x, y)).collect();
    let stroke = Stroke::new(points, body.width).map_err(|e| ApiError::malformed(e.to_string()))?;
    let mut guard = session.lock().await;
    let mut strokes = guard.strokes.clone();
    strokes.push(stroke);
    let results = retrieve(engine, strokes.clone()).await?;
    guard.strokes = strokes;
    guard.last = results;
    Ok(Json(guard.results()))
}

async fn undo_stroke(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<StageResults>, ApiError> {
    let engine = state.engine()?;
    let session = state.session(&id)?;
    let mut guard = session.lock().await;
    if guard.strokes.is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "nothing_to_undo",
            "the session has no strokes",
        ));
    }
    let strokes = guard.strokes[..guard.strokes.len() - 1].to_vec();
    let results = retrieve(engine, strokes.clone()).await?;
    guard.strokes = strokes;
    guard.last = results;
    Ok(Json(guard.results()))
}

async fn get_photo(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let engine = state.engine()?;
    let lookup = id.clone();
    let bytes = tokio::task::spawn_blocking(move || engine.photo(&lookup))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    match bytes {
        Some(png) => Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response()),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_photo",
            format!("no gallery photo `{id}`"),
        )),
    }
}

async fn get_config(State(state): State<Arc<AppState>>) -> Result<Json<ConfigBody>, ApiError> {
    let engine = state.engine()?;
    Ok(Json(ConfigBody {
        topk: engine.topk(),
        canvas: engine.canvas(),
        gallery_size: engine.gallery_size(),
    }))
}
