//! HTTP front end for trained checkpoints.
//!
//! Handlers clone the current [`Snapshot`] at the start of a request, so a
//! model swap never affects requests already in flight.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::cors::CorsLayer;

use matgraph::catalog::MaterialCatalog;
use matgraph::checkpoint::Checkpoint;
use matgraph::graph::{AssemblyGraph, GraphBundle};
use matgraph::ingest::{extract_bodies, parse_assembly};

pub mod error;
pub mod predict;

pub use error::{ApiError, ServeError};
pub use predict::{Candidate, GraphPayload, ModelInfo, NodePrediction, PredictRequest, PredictResponse, Snapshot, StoredGraph};

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Default)]
pub struct AppState {
    model: RwLock<Option<Arc<Snapshot>>>,
    /// Overrides the catalog embedded in checkpoints.
    catalog: Option<MaterialCatalog>,
    graphs: Mutex<BTreeMap<String, StoredGraph>>,
}

impl AppState {
    pub fn new(catalog: Option<MaterialCatalog>) -> Self {
        Self {
            catalog,
            ..Self::default()
        }
    }

    /// State from optional `--checkpoint` and `--catalog` paths.
    pub fn from_paths(checkpoint: Option<&Path>, catalog: Option<&Path>) -> Result<Self, ServeError> {
        let state = Self::new(catalog.map(MaterialCatalog::load).transpose()?);
        if let Some(p) = checkpoint {
            state.load(p)?;
        }
        Ok(state)
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.model.read().expect("model lock").clone()
    }

    /// Loads and installs a checkpoint; the previous snapshot stays valid
    /// for whoever holds it.
    pub fn load(&self, path: &Path) -> Result<Arc<Snapshot>, matgraph::Error> {
        let ck = Checkpoint::load(path)?;
        let snap = Arc::new(Snapshot::new(ck, self.catalog.clone(), Some(path))?);
        self.install(snap.clone());
        info!("serving checkpoint {} from {}", snap.id, path.display());
        Ok(snap)
    }

    pub fn install(&self, snap: Arc<Snapshot>) {
        *self.model.write().expect("model lock") = Some(snap);
    }

    fn stored(&self, id: &str) -> Option<StoredGraph> {
        self.graphs.lock().expect("graph lock").get(id).cloned()
    }
}

fn json<T: Serialize>(status: StatusCode, value: &T) -> Response {
    let body = serde_json::to_vec(value).expect("response serializes");
    (status, [("content-type", "application/json")], body).into_response()
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_json", e.to_string()))
}

fn current(state: &AppState) -> Result<Arc<Snapshot>, ApiError> {
    state.snapshot().ok_or_else(ApiError::no_model)
}

async fn get_model(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    Ok(json(StatusCode::OK, &current(&state)?.info()))
}

#[derive(Debug, Deserialize)]
struct LoadRequest {
    path: PathBuf,
}

async fn post_model(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: LoadRequest = parse_body(&body)?;
    if !req.path.is_file() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "checkpoint_not_found",
            format!("no checkpoint at {}", req.path.display()),
        ));
    }
    let snap = tokio::task::spawn_blocking(move || state.load(&req.path))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::bad_request("invalid_checkpoint", e.to_string()))?;
    Ok(json(StatusCode::OK, &snap.info()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UploadResponse {
    pub bundle_id: String,
    pub graph_id: String,
    pub kind: String,
    pub nodes: usize,
    pub connections: usize,
}

/// Accepts an assembly document or a graph bundle. Small graphs are kept:
/// the training discard rule does not apply here.
pub fn store_graph(state: &AppState, body: &[u8]) -> Result<UploadResponse, ApiError> {
    let value: serde_json::Value = parse_body(body)?;
    let bundle_id: String = Sha256::digest(value.to_string().as_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect();
    let (stored, resp) = if value.get("edge_index").is_some() {
        let bundle: GraphBundle =
            serde_json::from_value(value).map_err(|e| ApiError::bad_request("invalid_bundle", e.to_string()))?;
        let g = AssemblyGraph::try_from(bundle).map_err(|e| ApiError::bad_request("invalid_bundle", e.to_string()))?;
        let resp = UploadResponse {
            bundle_id: bundle_id.clone(),
            graph_id: g.graph_id.clone(),
            kind: "bundle".into(),
            nodes: g.num_nodes(),
            connections: g.num_connections(),
        };
        (StoredGraph::Bundle(g), resp)
    } else {
        let raw = parse_assembly(&value.to_string(), &bundle_id).map_err(|e| ApiError::bad_request("invalid_bundle", e.to_string()))?;
        let records = matgraph::ingest::AssemblyRecords::from_raw(&raw);
        if extract_bodies(&raw).is_empty() {
            return Err(ApiError::bad_request("invalid_bundle", "assembly has no visible bodies"));
        }
        let resp = UploadResponse {
            bundle_id: bundle_id.clone(),
            graph_id: raw.assembly_id.clone(),
            kind: "assembly".into(),
            nodes: records.bodies.len(),
            connections: records.connections.len(),
        };
        (StoredGraph::Assembly(raw), resp)
    };
    state.graphs.lock().expect("graph lock").insert(bundle_id, stored);
    Ok(resp)
}

async fn post_graphs(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    Ok(json(StatusCode::OK, &store_graph(&state, &body)?))
}

/// Full predict pipeline on one snapshot.
pub fn handle_predict(state: &AppState, snap: &Snapshot, body: &[u8]) -> Result<PredictResponse, ApiError> {
    let req: PredictRequest = parse_body(body)?;
    let graph = match &req.graph {
        GraphPayload::Assembly(doc) => {
            let raw = parse_assembly(&doc.to_string(), "request").map_err(|e| ApiError::bad_request("invalid_graph", e.to_string()))?;
            predict::assembly_to_graph(snap, &raw)?
        }
        GraphPayload::Bundle(b) => AssemblyGraph::try_from(b.clone()).map_err(|e| ApiError::bad_request("invalid_bundle", e.to_string()))?,
        GraphPayload::BundleId(id) => match state.stored(id) {
            Some(StoredGraph::Assembly(raw)) => predict::assembly_to_graph(snap, &raw)?,
            Some(StoredGraph::Bundle(g)) => g,
            None => return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_bundle", format!("no uploaded graph {id:?}"))),
        },
    };
    predict::predict(snap, &req, graph)
}

async fn post_predict(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let snap = current(&state)?;
    let resp = tokio::task::spawn_blocking(move || handle_predict(&state, &snap, &body))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(json(StatusCode::OK, &resp))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/model", get(get_model).post(post_model))
        .route("/v1/graphs", post(post_graphs))
        .route("/v1/predict", post(post_predict))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds `0.0.0.0:port` and serves until the process is stopped.
pub fn run(port: u16, state: AppState) -> Result<(), ServeError> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(SocketAddr::from(([0, 0, 0, 0], port))).await?;
        info!("listening on {}", listener.local_addr()?);
        serve(listener, Arc::new(state)).await
    })?;
    Ok(())
}
