//! HTTP front end for exploration sessions.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/sessions` | intent payload | 201, session view |
//! | GET | `/sessions/{id}` | | session view |
//! | POST | `/sessions/{id}/select` | `{effect_id, weight?}` | session view |
//! | GET | `/effects/{id}/preview` | `?max=` particles (default 256) | trajectory samples |
//! | GET | `/effects/{id}/kinematics` | | definition and representation |
//! | POST | `/artworks` | artwork request | 201, `{id, export}` |
//! | GET | `/artworks/{id}/export` | | export document |
//!
//! Errors are `{code, message, field?}` with status 400 (malformed JSON),
//! 404 (unknown id), 409 (selection not in the current round) or 422
//! (validation). Sessions and artworks live in memory for the life of the
//! process.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use kinetrail::config::EngineConfig;
use kinetrail::corpus::{CorpusIndex, IndexEntry};
use kinetrail::effect::ArtworkExport;
use kinetrail::search::SearchIndex;
use kinetrail::session::{
    compose, preview_trajectories, ArtworkRequest, Engine, ExplorationSession, IntentPayload, Round,
    SessionError, SessionEvent,
};
use kinetrail::simulator::TrajectorySample;

pub const DEFAULT_PREVIEW_PARTICLES: usize = 256;

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
            field: None,
        }
    }

    fn with_field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} {id:?}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::Validation { field, message } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message).with_field(field)
            }
            SessionError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "not_found", message),
            SessionError::InvalidSelection(_) => {
                Self::new(StatusCode::CONFLICT, "invalid_selection", message).with_field("effect_id")
            }
            SessionError::InvalidArtwork(violations) => {
                let text = violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
                let err = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", text);
                match violations.first() {
                    Some(v) => err.with_field(v.field.clone()),
                    None => err,
                }
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let status = r.status();
        let code = if status == StatusCode::UNPROCESSABLE_ENTITY {
            "validation"
        } else {
            "malformed_body"
        };
        Self::new(status, code, r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_query", r.body_text())
    }
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("loading index: {0}")]
    Index(#[from] kinetrail::corpus::CorpusError),
    #[error("{0}")]
    Search(#[from] kinetrail::search::SearchError),
    #[error("{0}")]
    Config(#[from] kinetrail::config::ConfigError),
    #[error("embedder produces {got}-dimensional vectors but the index was built with {want}")]
    EmbeddingDim { got: usize, want: usize },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// What a client sees of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub intent_text: Option<String>,
    /// Weight the next round will use unless the selection overrides it.
    pub weight: f64,
    pub rounds: Vec<Round>,
    pub events: Vec<SessionEvent>,
}

impl From<&ExplorationSession> for SessionView {
    fn from(s: &ExplorationSession) -> Self {
        Self {
            id: s.id.clone(),
            intent_text: s.intent_text.clone(),
            weight: s.weight,
            rounds: s.rounds.clone(),
            events: s.events.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRequest {
    pub effect_id: String,
    #[serde(default)]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreviewQuery {
    pub max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewResponse {
    pub effect_id: String,
    pub samples: Vec<TrajectorySample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredArtwork {
    pub id: String,
    pub export: ArtworkExport,
}

type SessionCell = Arc<Mutex<ExplorationSession>>;

/// Shared server state.
pub struct AppState {
    engine: Engine,
    sessions: RwLock<HashMap<String, SessionCell>>,
    artworks: RwLock<HashMap<String, ArtworkExport>>,
}

impl AppState {
    pub fn new(engine: Engine) -> Self {
        Self {
            engine,
            sessions: RwLock::new(HashMap::new()),
            artworks: RwLock::new(HashMap::new()),
        }
    }

    /// Loads the index named by `config` and instantiates its providers.
    pub fn from_config(config: &EngineConfig) -> Result<Self, StartupError> {
        let corpus = CorpusIndex::load(&config.index_path)?;
        Self::from_index(corpus, config)
    }

    pub fn from_index(corpus: CorpusIndex, config: &EngineConfig) -> Result<Self, StartupError> {
        let (llm, embedder) = config.providers()?;
        let want = corpus.params.embedding_dim;
        if embedder.dimension() != want {
            return Err(StartupError::EmbeddingDim {
                got: embedder.dimension(),
                want,
            });
        }
        let index = SearchIndex::new(corpus, config.search.clone())?;
        Ok(Self::new(Engine {
            index: Arc::new(index),
            llm,
            embedder,
        }))
    }

    fn session(&self, id: &str) -> Result<SessionCell, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }
}

fn lock(cell: &SessionCell) -> std::sync::MutexGuard<'_, ExplorationSession> {
    // a panicked writer leaves the previous, consistent session behind
    cell.lock().unwrap_or_else(|e| e.into_inner())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<IntentPayload>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let Json(intent) = body?;
    let st = state.clone();
    let session = blocking(move || {
        let id = uuid::Uuid::new_v4().to_string();
        Ok(ExplorationSession::create(id, intent, &st.engine)?)
    })
    .await?;
    let view = SessionView::from(&session);
    state
        .sessions
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .insert(session.id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    let cell = state.session(&id)?;
    let view = SessionView::from(&*lock(&cell));
    Ok(Json(view))
}

async fn select(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SelectRequest>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let Json(req) = body?;
    let cell = state.session(&id)?;
    let view = blocking(move || {
        let mut session = lock(&cell);
        session.select(&req.effect_id, req.weight, &state.engine)?;
        Ok(SessionView::from(&*session))
    })
    .await?;
    Ok(Json(view))
}

async fn preview(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<PreviewQuery>, QueryRejection>,
) -> Result<Json<PreviewResponse>, ApiError> {
    let Query(q) = query?;
    let max = q.max.unwrap_or(DEFAULT_PREVIEW_PARTICLES);
    let effect_id = id.clone();
    let samples = blocking(move || Ok(preview_trajectories(&state.engine.index, &id, max)?)).await?;
    Ok(Json(PreviewResponse { effect_id, samples }))
}

async fn kinematics(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<IndexEntry>, ApiError> {
    state
        .engine
        .index
        .corpus()
        .entries
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found("effect", &id))
}

async fn create_artwork(
    State(state): State<Arc<AppState>>,
    body: Result<Json<ArtworkRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<StoredArtwork>), ApiError> {
    let Json(request) = body?;
    let session = match &request.session_id {
        Some(sid) => Some(lock(&state.session(sid)?).clone()),
        None => None,
    };
    let export = compose(&request, session.as_ref(), &state.engine.index)?;
    let id = uuid::Uuid::new_v4().to_string();
    state
        .artworks
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .insert(id.clone(), export.clone());
    Ok((StatusCode::CREATED, Json(StoredArtwork { id, export })))
}

async fn export_artwork(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<ArtworkExport>, ApiError> {
    state
        .artworks
        .read()
        .unwrap_or_else(|e| e.into_inner())
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found("artwork", &id))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/select", post(select))
        .route("/effects/{id}/preview", get(preview))
        .route("/effects/{id}/kinematics", get(kinematics))
        .route("/artworks", post(create_artwork))
        .route("/artworks/{id}/export", get(export_artwork))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, bind: &str, port: u16) -> Result<(), StartupError> {
    let listener = tokio::net::TcpListener::bind((bind, port)).await?;
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Reads configuration from the environment and serves.
pub async fn run_from_env(index_override: Option<&Path>) -> Result<(), StartupError> {
    let mut config = EngineConfig::from_env()?;
    if let Some(p) = index_override {
        config.index_path = p.to_path_buf();
    }
    let state = tokio::task::spawn_blocking(move || AppState::from_config(&config).map(|s| (s, config)))
        .await
        .map_err(|e| std::io::Error::other(e.to_string()))??;
    let (state, config) = state;
    serve(state, &config.server.bind, config.server.port).await
}
