//! Local HTTP + JSON front end for guidance sessions.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::efsm::{adjacency_json, Efsm};
use crate::guidance::{GuidanceError, Session};
use crate::trace::{Label, ParamVector};

pub const DEFAULT_TTL: Duration = Duration::from_secs(60 * 60);

struct Entry {
    session: Session,
    last_used: Instant,
}

pub struct ServiceState {
    models: Mutex<HashMap<String, Arc<Efsm>>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Entry>>>>,
    next_id: AtomicU64,
    ttl: Duration,
}

impl ServiceState {
    pub fn new(ttl: Duration) -> Arc<Self> {
        Arc::new(ServiceState {
            models: Mutex::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            ttl,
        })
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    /// Registers a model and returns its id.
    pub fn add_model(&self, model: Efsm) -> String {
        let id = self.fresh_id("m");
        self.models
            .lock()
            .unwrap()
            .insert(id.clone(), Arc::new(model));
        id
    }

    fn model(&self, id: &str) -> Result<Arc<Efsm>, ApiError> {
        self.models
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no model {id}")))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Entry>>, ApiError> {
        let mut sessions = self.sessions.lock().unwrap();
        let now = Instant::now();
        sessions.retain(|_, e| match e.try_lock() {
            Ok(e) => now.duration_since(e.last_used) < self.ttl,
            Err(_) => true,
        });
        sessions
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }
}

struct ApiError {
    status: StatusCode,
    message: String,
    available: Option<Vec<Label>>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            available: None,
        }
    }

    fn not_found(message: String) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<GuidanceError> for ApiError {
    fn from(e: GuidanceError) -> Self {
        match &e {
            GuidanceError::NoSuchLabel { available, .. } => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                available: Some(available.clone()),
                message: e.to_string(),
            },
            GuidanceError::EmptyHistory => ApiError::new(StatusCode::CONFLICT, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": self.message, "available": self.available })),
        )
            .into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn session_view(session: &Session) -> Value {
    json!({
        "state": session.cursor(),
        "accepting": session.is_accepting(),
        "script": session.render_script(),
    })
}

async fn load_model(State(state): State<Arc<ServiceState>>, body: Bytes) -> ApiResult {
    let model = Efsm::from_json(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let states = model.state_count();
    let id = state.add_model(model);
    Ok((
        StatusCode::CREATED,
        Json(json!({ "id": id, "states": states })),
    )
        .into_response())
}

async fn open_session(
    State(state): State<Arc<ServiceState>>,
    Path(model_id): Path<String>,
) -> ApiResult {
    let model = state.model(&model_id)?;
    let session = Session::open(model);
    let view = session_view(&session);
    let id = state.fresh_id("s");
    state.sessions.lock().unwrap().insert(
        id.clone(),
        Arc::new(Mutex::new(Entry {
            session,
            last_used: Instant::now(),
        })),
    );
    Ok((
        StatusCode::CREATED,
        Json(json!({ "id": id, "model": model_id, "session": view })),
    )
        .into_response())
}

/// Runs `f` with exclusive access to the session.
fn with_session<T>(
    state: &ServiceState,
    id: &str,
    f: impl FnOnce(&mut Session) -> Result<T, ApiError>,
) -> Result<T, ApiError> {
    let entry = state.session(id)?;
    let mut entry = entry.lock().unwrap();
    entry.last_used = Instant::now();
    f(&mut entry.session)
}

async fn options(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> ApiResult {
    with_session(&state, &id, |s| Ok(Json(s.options()).into_response()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRequest {
    label: String,
    #[serde(default)]
    params: Vec<String>,
    #[serde(default)]
    combined: bool,
}

async fn step(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult {
    let bad = |e: &dyn std::fmt::Display| ApiError::new(StatusCode::BAD_REQUEST, e.to_string());
    let req: StepRequest = serde_json::from_slice(&body).map_err(|e| bad(&e))?;
    let label = Label::new(req.label).map_err(|e| bad(&e))?;
    let values = ParamVector::new(&req.params, req.combined).map_err(|e| bad(&e))?;
    with_session(&state, &id, |s| {
        let advisory = s.step(label, values)?;
        let mut view = session_view(s);
        view["advisory"] = serde_json::to_value(advisory).expect("advisory serializes");
        Ok(Json(view).into_response())
    })
}

async fn undo(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> ApiResult {
    with_session(&state, &id, |s| {
        let removed = s.undo()?;
        let mut view = session_view(s);
        view["removed"] = json!(removed.render());
        Ok(Json(view).into_response())
    })
}

async fn script(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> ApiResult {
    with_session(&state, &id, |s| {
        let history: Vec<_> = s
            .history()
            .iter()
            .map(|e| json!({ "label": e.label, "params": e.values.params, "combined": e.values.combined }))
            .collect();
        let mut view = session_view(s);
        view["history"] = json!(history);
        Ok(Json(view).into_response())
    })
}

#[derive(Deserialize)]
struct GraphQuery {
    format: Option<String>,
}

async fn graph(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    Query(q): Query<GraphQuery>,
) -> ApiResult {
    let model = state.model(&id)?;
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(adjacency_json(&model)).into_response()),
        Some("dot") => Ok((
            [(header::CONTENT_TYPE, "text/vnd.graphviz")],
            model.export_dot(),
        )
            .into_response()),
        Some(other) => Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("unknown graph format {other:?} (expected json or dot)"),
        )),
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/models", post(load_model))
        .route("/models/{id}/sessions", post(open_session))
        .route("/models/{id}/graph", get(graph))
        .route("/sessions/{id}/options", get(options))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/script", get(script))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ServiceState>,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
