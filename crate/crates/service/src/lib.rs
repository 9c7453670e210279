//! HTTP front end for the plate attribute index.
//!
//! Readers share the store behind a read lock; corrections take the write
//! lock, so every request sees either all or none of an event.

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::thread;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use fleetlens_core::store::{GeoBox, Query, StoreError, DEFAULT_PAGE};
use fleetlens_core::{PlateId, Store, Task};

pub mod client;

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<RwLock<Store>>,
    pub clock: Clock,
}

impl AppState {
    pub fn new(store: Store) -> Self {
        AppState { store: Arc::new(RwLock::new(store)), clock: Arc::new(Utc::now) }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub plates: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionRequest {
    pub plate_id: String,
    pub task: String,
    pub label: String,
    pub author: String,
}

/// JSON error body: `{"error": kind, "message": text}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(kind: &'static str, message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, kind, message: message.into() }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, kind) = match &e {
            StoreError::InvalidQuery(_) => (StatusCode::BAD_REQUEST, "InvalidQuery"),
            StoreError::Invalid(_) => (StatusCode::BAD_REQUEST, "InvalidInput"),
            StoreError::NotFound(_) => (StatusCode::NOT_FOUND, "NotFound"),
            StoreError::UnknownLabel { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "UnknownLabel"),
            StoreError::StoreCorrupt { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "StoreCorrupt"),
            StoreError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "Io"),
        };
        ApiError { status, kind, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.kind, "message": self.message}))).into_response()
    }
}

fn poisoned() -> ApiError {
    ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, kind: "Internal", message: "store lock poisoned".into() }
}

/// Parses `/v1/search` parameters. Label filters accept repeated keys and
/// comma-separated values; the geographic box needs all four bounds.
pub fn parse_search(raw: &str) -> Result<Query, String> {
    let mut query = Query::default();
    let mut bounds: BTreeMap<String, f64> = BTreeMap::new();
    for (key, value) in form_urlencoded::parse(raw.as_bytes()) {
        let value = value.trim();
        match key.as_ref() {
            "make" | "shape" | "colour" | "colour_binary" => {
                let task: Task = key.parse().map_err(|e| format!("{e}"))?;
                let set = query.labels.entry(task).or_default();
                set.extend(value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from));
            }
            "from" | "to" => {
                if value.is_empty() {
                    continue;
                }
                let t = DateTime::parse_from_rfc3339(value)
                    .map_err(|e| format!("{key}={value:?}: {e}"))?
                    .with_timezone(&Utc);
                if key == "from" {
                    query.from = Some(t);
                } else {
                    query.to = Some(t);
                }
            }
            "lat_min" | "lat_max" | "lon_min" | "lon_max" => {
                if value.is_empty() {
                    continue;
                }
                let v: f64 = value.parse().map_err(|e| format!("{key}={value:?}: {e}"))?;
                bounds.insert(key.into_owned(), v);
            }
            "include_unknown" => {
                query.include_unknown = match value {
                    "" | "false" | "0" => false,
                    "true" | "1" => true,
                    other => return Err(format!("include_unknown={other:?} is not a boolean")),
                }
            }
            "offset" => query.offset = value.parse().map_err(|e| format!("offset={value:?}: {e}"))?,
            "limit" => {
                query.limit = if value.is_empty() {
                    DEFAULT_PAGE
                } else {
                    value.parse().map_err(|e| format!("limit={value:?}: {e}"))?
                }
            }
            other => return Err(format!("unknown parameter {other:?}")),
        }
    }
    query.labels.retain(|_, set| !set.is_empty());
    match bounds.len() {
        0 => {}
        4 => {
            query.area = Some(GeoBox {
                lat_min: bounds["lat_min"],
                lat_max: bounds["lat_max"],
                lon_min: bounds["lon_min"],
                lon_max: bounds["lon_max"],
            })
        }
        _ => return Err("lat_min, lat_max, lon_min and lon_max must be given together".into()),
    }
    Ok(query)
}

/// Inverse of [`parse_search`].
pub fn search_params(query: &Query) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (task, labels) in &query.labels {
        if !labels.is_empty() {
            let joined: Vec<&str> = labels.iter().map(String::as_str).collect();
            out.push((task.to_string(), joined.join(",")));
        }
    }
    if let Some(from) = query.from {
        out.push(("from".into(), from.to_rfc3339()));
    }
    if let Some(to) = query.to {
        out.push(("to".into(), to.to_rfc3339()));
    }
    if let Some(b) = query.area {
        for (k, v) in [("lat_min", b.lat_min), ("lat_max", b.lat_max), ("lon_min", b.lon_min), ("lon_max", b.lon_max)] {
            out.push((k.into(), v.to_string()));
        }
    }
    if query.include_unknown {
        out.push(("include_unknown".into(), "true".into()));
    }
    out.push(("offset".into(), query.offset.to_string()));
    out.push(("limit".into(), query.limit.to_string()));
    out
}

async fn search(State(state): State<AppState>, RawQuery(raw): RawQuery) -> Result<Response, ApiError> {
    let query = parse_search(raw.as_deref().unwrap_or("")).map_err(|m| ApiError::bad_request("InvalidQuery", m))?;
    let store = state.store.read().map_err(|_| poisoned())?;
    Ok(Json(store.search(&query)?).into_response())
}

async fn plate(State(state): State<AppState>, Path(raw): Path<String>) -> Result<Response, ApiError> {
    let id = PlateId::parse(&raw).map_err(|e| ApiError::bad_request("InvalidInput", e.to_string()))?;
    let store = state.store.read().map_err(|_| poisoned())?;
    Ok(Json(store.get_plate(&id)?).into_response())
}

async fn correction(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CorrectionRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("InvalidInput", e.to_string()))?;
    let id = PlateId::parse(&req.plate_id).map_err(|e| ApiError::bad_request("InvalidInput", e.to_string()))?;
    let task: Task = req.task.parse().map_err(|e| ApiError::bad_request("InvalidInput", format!("{e}")))?;
    let now = (state.clock)();
    let mut store = state.store.write().map_err(|_| poisoned())?;
    Ok(Json(store.submit_correction(&id, task, &req.label, &req.author, now)?).into_response())
}

async fn health(State(state): State<AppState>) -> Result<Json<Health>, ApiError> {
    let store = state.store.read().map_err(|_| poisoned())?;
    Ok(Json(Health { status: "ok".into(), plates: store.plate_count() }))
}

async fn taxonomies(State(state): State<AppState>) -> Result<Response, ApiError> {
    let store = state.store.read().map_err(|_| poisoned())?;
    Ok(Json(store.taxonomies()).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/search", get(search))
        .route("/v1/plates/{plate_id}", get(plate))
        .route("/v1/corrections", post(correction))
        .route("/v1/health", get(health))
        .route("/v1/taxonomies", get(taxonomies))
        .with_state(state)
}

/// Serves until the process is stopped.
pub fn run(addr: &str, state: AppState) -> io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state)).await
    })
}

/// A server on a background thread, stopped when dropped.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    handle: Option<thread::JoinHandle<io::Result<()>>>,
}

impl BackgroundServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

pub fn spawn(addr: &str, state: AppState) -> io::Result<BackgroundServer> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let handle = thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, router(state))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    });
    Ok(BackgroundServer { addr: local, shutdown: Some(tx), handle: Some(handle) })
}
