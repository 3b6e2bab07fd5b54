//! JSON-over-HTTP front end for synthesis sessions.
//!
//! | method | route                                   | body / query        |
//! |--------|-----------------------------------------|---------------------|
//! | POST   | `/sessions`                             | [`CreateSession`]   |
//! | GET    | `/sessions/{id}`                        |                     |
//! | POST   | `/sessions/{id}/nodes/{nid}/propose`    | [`ProposeRequest`]  |
//! | POST   | `/sessions/{id}/nodes/{nid}/select`     | [`SelectRequest`]   |
//! | GET    | `/sessions/{id}/nodes/{nid}/mesh?res=R` |                     |
//! | DELETE | `/sessions/{id}`                        |                     |
//!
//! Errors are `{"code": ..., "message": ...}`. Meshes travel as OBJ text.
//! Decoding work runs on the blocking pool behind a semaphore; a request
//! that finds every permit taken gets 503 instead of queueing.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::error::Error;
use crate::geometry::{marching_cubes, read_vgrid, write_obj, AffineTransform, TriangleMesh};
use crate::latent::LatentCode;
use crate::psn::Kind;
use crate::synthesis::{Initial, ModelDigests, Models, PlacedPart, SessionDocument, SynthesisConfig, SynthesisSession};

pub const MIN_EXPORT_RES: usize = 8;
pub const MAX_EXPORT_RES: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub max_depth: usize,
    /// Concurrent decoding requests allowed before answering 503. Zero
    /// rejects every decoding request.
    pub decode_cap: usize,
    /// When set, sessions are written here after every change and read back
    /// at start-up.
    pub session_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { max_depth: SynthesisConfig::default().max_depth, decode_cap: 4, session_dir: None }
    }
}

type SharedSession = Arc<Mutex<SynthesisSession>>;

struct Inner {
    models: BTreeMap<Kind, Models>,
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, SharedSession>>,
    permits: Arc<Semaphore>,
}

/// Shared server state.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(models: BTreeMap<Kind, Models>, config: ServiceConfig) -> Self {
        let permits = Arc::new(Semaphore::new(config.decode_cap));
        Self(Arc::new(Inner { models, config, sessions: Mutex::new(HashMap::new()), permits }))
    }

    /// Reloads every session file in the session directory whose models are
    /// loaded. Returns the number restored.
    pub fn restore_sessions(&self) -> crate::Result<usize> {
        let Some(dir) = &self.0.config.session_dir else { return Ok(0) };
        if !dir.exists() {
            return Ok(0);
        }
        let mut n = 0;
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let path = e.path();
            if path.extension().and_then(|s| s.to_str()) != Some("json") {
                continue;
            }
            let doc: SessionDocument = serde_json::from_slice(&std::fs::read(&path)?)?;
            let Some(models) = self.0.models.get(&doc.psn_kind) else {
                log::warn!("skipping {}: {} model not loaded", path.display(), doc.psn_kind);
                continue;
            };
            match SynthesisSession::from_document(&doc, models.clone()) {
                Ok(s) => {
                    self.0.sessions.lock().unwrap().insert(doc.id.clone(), Arc::new(Mutex::new(s)));
                    n += 1;
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(n)
    }

    fn session(&self, id: &str) -> Result<SharedSession, ApiError> {
        self.0.sessions.lock().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    fn persist(&self, s: &SynthesisSession) -> Result<(), ApiError> {
        if let Some(dir) = &self.0.config.session_dir {
            std::fs::create_dir_all(dir).map_err(|e| ApiError::internal(e.to_string()))?;
            let json = serde_json::to_vec_pretty(&s.to_document()).map_err(|e| ApiError::internal(e.to_string()))?;
            std::fs::write(dir.join(format!("{}.json", s.id)), json).map_err(|e| ApiError::internal(e.to_string()))?;
        }
        Ok(())
    }

    /// Runs `f` on the blocking pool if a decode permit is free.
    async fn decode<T: Send + 'static>(&self, f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
        let permit = self.0.permits.clone().try_acquire_owned().map_err(|_| ApiError::busy())?;
        let out = tokio::task::spawn_blocking(move || {
            let r = f();
            drop(permit);
            r
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
        out
    }
}

/// Error body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into() } }
    }

    fn not_found(m: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", m)
    }

    fn internal(m: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", m)
    }

    fn busy() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "busy", "all decode slots are in use")
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::UnknownNode(_) => Self::new(StatusCode::NOT_FOUND, "not_found", m),
            Error::StaleSuggestions(_) => Self::new(StatusCode::GONE, "stale_suggestions", m),
            Error::IndexOutOfRange { .. } => Self::new(StatusCode::BAD_REQUEST, "index_out_of_range", m),
            Error::DepthLimit(_) => Self::new(StatusCode::CONFLICT, "depth_limit", m),
            Error::ModelNotReady(_) => Self::new(StatusCode::CONFLICT, "models_not_loaded", m),
            Error::EmptyShape | Error::ResolutionMismatch { .. } => Self::new(StatusCode::BAD_REQUEST, "bad_grid", m),
            Error::InvalidArgument(_) => Self::new(StatusCode::BAD_REQUEST, "bad_request", m),
            Error::EmptySurface => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_surface", m),
            _ => Self::internal(m),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// `"random"` (the default) or a base64-encoded VGRID file.
    pub initial: Option<String>,
    pub psn_kind: Option<Kind>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposeRequest {
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRequest {
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiNode {
    pub id: u64,
    pub parent: Option<u64>,
    pub depth: usize,
    pub parts: Vec<PlacedPart>,
    pub occupied_voxels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiPending {
    pub node: u64,
    pub k: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiModels {
    pub psn_kind: Kind,
    pub digests: ModelDigests,
    pub resolution: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiSessionState {
    pub id: String,
    pub nodes: Vec<ApiNode>,
    /// `(parent, child)` pairs.
    pub edges: Vec<(u64, u64)>,
    pub pending: Vec<ApiPending>,
    pub models: ApiModels,
    pub config: SynthesisConfig,
}

impl ApiSessionState {
    pub fn of(s: &SynthesisSession) -> Self {
        let nodes: Vec<ApiNode> = s
            .nodes()
            .map(|n| ApiNode {
                id: n.id,
                parent: n.parent,
                depth: n.depth,
                parts: n.parts.clone(),
                occupied_voxels: n.assembly.count_occupied(0.5),
            })
            .collect();
        let edges = nodes.iter().filter_map(|n| n.parent.map(|p| (p, n.id))).collect();
        ApiSessionState {
            id: s.id.clone(),
            nodes,
            edges,
            pending: s.pending_sets().map(|p| ApiPending { node: p.node, k: p.items.len(), seed: p.seed }).collect(),
            models: ApiModels {
                psn_kind: s.models().psn.kind(),
                digests: s.models().digests().clone(),
                resolution: s.models().resolution(),
            },
            config: s.config().clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiSuggestion {
    pub index: usize,
    /// Preview assembly as OBJ text.
    pub mesh: String,
    pub xf: AffineTransform,
    pub code: LatentCode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposeResponse {
    pub node: u64,
    pub seed: u64,
    pub items: Vec<ApiSuggestion>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct MeshQuery {
    pub res: Option<usize>,
}

pub fn obj_text(mesh: &TriangleMesh) -> String {
    let mut buf = Vec::new();
    write_obj(mesh, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("OBJ is ASCII")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/nodes/{nid}/propose", post(propose))
        .route("/sessions/{id}/nodes/{nid}/select", post(select))
        .route("/sessions/{id}/nodes/{nid}/mesh", get(mesh))
        .with_state(state)
}

fn parse_initial(initial: Option<&str>, seed: u64) -> Result<Initial, ApiError> {
    match initial {
        None | Some("random") => Ok(Initial::Random { seed }),
        Some(b64) => {
            let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, "bad_grid", m);
            let bytes = base64::engine::general_purpose::STANDARD.decode(b64).map_err(|e| bad(e.to_string()))?;
            Ok(Initial::Part(read_vgrid(&bytes[..]).map_err(|e| bad(e.to_string()))?))
        }
    }
}

async fn create_session(State(st): State<AppState>, Json(req): Json<CreateSession>) -> Result<(StatusCode, Json<ApiSessionState>), ApiError> {
    let kind = match req.psn_kind {
        Some(k) => k,
        None if st.0.models.contains_key(&Kind::Cimle) => Kind::Cimle,
        None => *st.0.models.keys().next().ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "models_not_loaded", "no models loaded"))?,
    };
    let models = st
        .0
        .models
        .get(&kind)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "models_not_loaded", format!("{kind} model not loaded")))?;
    let initial = parse_initial(req.initial.as_deref(), req.seed.unwrap_or_else(rand::random))?;
    let config = SynthesisConfig { k: req.k.unwrap_or(SynthesisConfig::default().k), max_depth: st.0.config.max_depth };
    let id = format!("{:032x}", rand::random::<u128>());
    let st2 = st.clone();
    let state = st
        .decode(move || {
            let s = SynthesisSession::start(id.clone(), initial, models, config)?;
            st2.persist(&s)?;
            let state = ApiSessionState::of(&s);
            st2.0.sessions.lock().unwrap().insert(id, Arc::new(Mutex::new(s)));
            Ok(state)
        })
        .await?;
    Ok((StatusCode::CREATED, Json(state)))
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<ApiSessionState>, ApiError> {
    let s = st.session(&id)?;
    let state = ApiSessionState::of(&s.lock().unwrap());
    Ok(Json(state))
}

async fn delete_session(State(st): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    st.0.sessions.lock().unwrap().remove(&id).ok_or_else(|| ApiError::not_found(format!("no session {id}")))?;
    if let Some(dir) = &st.0.config.session_dir {
        let _ = std::fs::remove_file(dir.join(format!("{id}.json")));
    }
    Ok(StatusCode::NO_CONTENT)
}

async fn propose(
    State(st): State<AppState>,
    Path((id, nid)): Path<(String, u64)>,
    body: Option<Json<ProposeRequest>>,
) -> Result<Json<ProposeResponse>, ApiError> {
    let s = st.session(&id)?;
    let seed = body.and_then(|b| b.0.seed).unwrap_or_else(rand::random);
    let out = st
        .decode(move || {
            let mut s = s.lock().unwrap();
            let set = s.propose(nid, seed)?;
            let mut items = Vec::with_capacity(set.items.len());
            for (index, it) in set.items.iter().enumerate() {
                let mesh = obj_text(&marching_cubes(&it.preview, 0.5)?);
                items.push(ApiSuggestion { index, mesh, xf: it.xf, code: it.code.clone() });
            }
            Ok(ProposeResponse { node: nid, seed, items })
        })
        .await?;
    Ok(Json(out))
}

async fn select(
    State(st): State<AppState>,
    Path((id, nid)): Path<(String, u64)>,
    Json(req): Json<SelectRequest>,
) -> Result<Json<ApiSessionState>, ApiError> {
    let s = st.session(&id)?;
    let mut s = s.lock().unwrap();
    s.select(nid, req.index)?;
    st.persist(&s)?;
    Ok(Json(ApiSessionState::of(&s)))
}

async fn mesh(State(st): State<AppState>, Path((id, nid)): Path<(String, u64)>, Query(q): Query<MeshQuery>) -> Result<Response, ApiError> {
    let s = st.session(&id)?;
    let res = q.res.unwrap_or_else(|| s.lock().unwrap().models().resolution());
    if !(MIN_EXPORT_RES..=MAX_EXPORT_RES).contains(&res) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "bad_resolution",
            format!("resolution {res} outside {MIN_EXPORT_RES}..={MAX_EXPORT_RES}"),
        ));
    }
    let text = st.decode(move || Ok(obj_text(&s.lock().unwrap().export_node(nid, res)?))).await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
