use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use seqloc_core::io::{self, FragmentRecord, IoError, ManualPair};
use seqloc_core::pipeline::FrameManifest;
use seqloc_core::FramePair;
use serde_json::json;
use thiserror::Error;
use tower_http::services::ServeDir;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0} not found")]
    Missing(&'static str),
    #[error("frame_i must be smaller than frame_j")]
    Order,
    #[error("frame {0} is not in the manifest")]
    UnknownFrame(usize),
    #[error("pair ({0}, {1}) is already listed")]
    Duplicate(usize, usize),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::Missing(_) => StatusCode::NOT_FOUND,
            ApiError::Order | ApiError::UnknownFrame(_) => StatusCode::BAD_REQUEST,
            ApiError::Duplicate(..) => StatusCode::CONFLICT,
            ApiError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if let ApiError::Io(e) = &self {
            log::error!("{e}");
        }
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug)]
struct AppState {
    data_dir: PathBuf,
    /// Serializes read-modify-write cycles of the manual pairs table.
    manual_lock: Mutex<()>,
}

impl AppState {
    fn path(&self, name: &str) -> PathBuf {
        self.data_dir.join(name)
    }
}

type Shared = State<Arc<AppState>>;

/// JSON API over a data directory, plus the browser bundle at `/` when
/// `static_dir` is given.
pub fn router(data_dir: PathBuf, static_dir: Option<PathBuf>) -> Router {
    let state = Arc::new(AppState { data_dir, manual_lock: Mutex::new(()) });
    let api = Router::new()
        .route("/api/manifest", get(manifest))
        .route("/api/fragments", get(fragments))
        .route("/api/pairs/proposed", get(proposed_pairs))
        .route("/api/pairs/manual", get(manual_pairs).post(add_manual_pair))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub fn serve(data_dir: PathBuf, static_dir: Option<PathBuf>, addr: SocketAddr) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("serving {} on http://{}", data_dir.display(), listener.local_addr()?);
        axum::serve(listener, router(data_dir, static_dir)).await?;
        Ok(())
    })
}

fn read_manual(path: &Path) -> Result<Vec<ManualPair>, ApiError> {
    Ok(if path.exists() { io::read_manual_pairs(path)? } else { Vec::new() })
}

async fn manifest(State(state): Shared) -> Result<Json<FrameManifest>, ApiError> {
    let path = state.path(io::MANIFEST_FILE);
    if !path.exists() {
        return Err(ApiError::Missing("manifest"));
    }
    Ok(Json(io::read_manifest(&path)?))
}

async fn fragments(State(state): Shared) -> Result<Json<Vec<FragmentRecord>>, ApiError> {
    let path = state.path(io::FRAGMENTS_FILE);
    Ok(Json(if path.exists() { io::read_fragments(&path)? } else { Vec::new() }))
}

async fn proposed_pairs(State(state): Shared) -> Result<Json<Vec<FramePair>>, ApiError> {
    let path = state.path(io::PROPOSED_PAIRS_FILE);
    Ok(Json(if path.exists() { io::read_pairs(&path)? } else { Vec::new() }))
}

async fn manual_pairs(State(state): Shared) -> Result<Json<Vec<ManualPair>>, ApiError> {
    let _guard = state.manual_lock.lock().unwrap_or_else(|e| e.into_inner());
    Ok(Json(read_manual(&state.path(io::MANUAL_PAIRS_FILE))?))
}

/// Appends a pair to the manual pairs table. A frame pair can be listed
/// once, whatever its crops.
async fn add_manual_pair(State(state): Shared, Json(pair): Json<ManualPair>) -> Result<Json<ManualPair>, ApiError> {
    if pair.frame_i >= pair.frame_j {
        return Err(ApiError::Order);
    }
    let manifest_path = state.path(io::MANIFEST_FILE);
    if manifest_path.exists() {
        let n = io::read_manifest(&manifest_path)?.len();
        if pair.frame_j >= n {
            return Err(ApiError::UnknownFrame(pair.frame_j));
        }
    }
    let _guard = state.manual_lock.lock().unwrap_or_else(|e| e.into_inner());
    let path = state.path(io::MANUAL_PAIRS_FILE);
    let mut pairs = read_manual(&path)?;
    if pairs.iter().any(|p| (p.frame_i, p.frame_j) == (pair.frame_i, pair.frame_j)) {
        return Err(ApiError::Duplicate(pair.frame_i, pair.frame_j));
    }
    pairs.push(pair);
    io::write_manual_pairs(&path, &pairs)?;
    log::info!("manual pair ({}, {}) added", pair.frame_i, pair.frame_j);
    Ok(Json(pair))
}
