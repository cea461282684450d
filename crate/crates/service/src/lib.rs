//! HTTP API over live policy-tree sessions.
//!
//! A session owns one environment instance, its baseline policy and the
//! controller executing the current tree. Each step is either an approval of
//! the recommended action or an override. Sessions are persisted as their
//! configuration plus the action log, and rebuilt by replay on first access
//! after a restart.

pub mod error;
pub mod session;
pub mod store;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use policy_tree::baselines::FittedQConfig;
use policy_tree::env::EnvKind;
use policy_tree::exec::{ControllerConfig, LeafPolicy};
use policy_tree::setup::{instantiate, BaselineKind, EnvParams, Setup};
use policy_tree::{ActionId, BuildConfig};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use tokio::sync::RwLock;

pub use error::ApiError;
pub use session::{ActOutcome, HistoryEntry, Session, SessionView, Status};
pub use store::{ActMode, DirStore, LoggedAction, MemoryStore, SessionRecord, SessionStore};

/// A live session plus progress fields that stay readable while a step or
/// rebuild holds the lock.
struct Slot {
    session: Arc<RwLock<Session>>,
    busy: AtomicBool,
    step: AtomicUsize,
    finished: AtomicBool,
}

impl Slot {
    fn new(session: Session) -> Arc<Self> {
        let (step, finished) = (session.view().step, session.is_finished());
        Arc::new(Self {
            session: Arc::new(RwLock::new(session)),
            busy: AtomicBool::new(false),
            step: step.into(),
            finished: finished.into(),
        })
    }
}

pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    store: Arc<dyn SessionStore>,
    setups: Mutex<HashMap<String, Setup>>,
    fitted: FittedQConfig,
}

impl AppState {
    pub fn new(store: Arc<dyn SessionStore>) -> Self {
        Self::with_fitted_q(store, FittedQConfig::default())
    }

    /// `fitted` configures training for sessions that use a fitted-Q baseline.
    pub fn with_fitted_q(store: Arc<dyn SessionStore>, fitted: FittedQConfig) -> Self {
        Self { sessions: RwLock::default(), store, setups: Mutex::default(), fitted }
    }

    /// Baselines are deterministic in their parameters, so trained or solved
    /// policies are shared between sessions.
    fn setup(&self, env: &EnvParams, baseline: BaselineKind) -> Result<Setup, ApiError> {
        let key = serde_json::to_string(&(env, baseline)).map_err(|e| ApiError::internal(e.to_string()))?;
        if let Some(s) = self.setups.lock().unwrap().get(&key) {
            return Ok(s.clone());
        }
        let setup = instantiate(env, baseline, &self.fitted, 0)?;
        self.setups.lock().unwrap().insert(key, setup.clone());
        Ok(setup)
    }

    async fn slot(self: &Arc<Self>, id: &str) -> Result<Arc<Slot>, ApiError> {
        if let Some(s) = self.sessions.read().await.get(id) {
            return Ok(s.clone());
        }
        let record = self.store.load(id)?.ok_or_else(|| ApiError::not_found(format!("no session `{id}`")))?;
        let state = self.clone();
        let session = blocking(move || {
            let setup = state.setup(&record.env, record.baseline)?;
            Session::open(record, setup)
        })
        .await?;
        let mut sessions = self.sessions.write().await;
        // Another request may have rehydrated it meanwhile.
        Ok(sessions.entry(id.to_string()).or_insert_with(|| Slot::new(session)).clone())
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    if body.is_empty() {
        return serde_json::from_slice(b"{}").map_err(|e| ApiError::bad_request(format!("invalid request: {e}")));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request: {e}")))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub env: String,
    #[serde(default)]
    pub params: serde_json::Value,
    pub baseline: Option<String>,
    pub build: Option<BuildConfig>,
    pub controller: Option<ControllerConfig>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActRequest {
    /// May be omitted when approving; the recommendation is taken.
    pub action: Option<ActionId>,
    pub mode: ActMode,
}

/// Answered without waiting for the session lock.
#[derive(Debug, Clone, Serialize)]
pub struct StatusView {
    pub id: String,
    /// A step, including any rebuild it triggers, is in progress.
    pub busy: bool,
    pub step: usize,
    pub finished: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub sessions: usize,
}

/// Sessions rebuild a fresh tree whenever the current one runs out.
pub fn default_controller() -> ControllerConfig {
    ControllerConfig { leaf_policy: LeafPolicy::Rebuild, ..ControllerConfig::default() }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/tree", get(get_tree))
        .route("/sessions/{id}/act", post(act))
        .route("/sessions/{id}/history", get(history))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health { status: "ok", sessions: state.sessions.read().await.len() })
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req: CreateRequest = parse_body(&body)?;
    let kind: EnvKind = req.env.parse()?;
    let env = EnvParams::from_json(kind, req.params)?;
    let baseline = match &req.baseline {
        Some(b) => b.parse()?,
        None => kind.default_baseline(),
    };
    let build = req.build.unwrap_or_default();
    build.validate()?;
    let controller = req.controller.unwrap_or_else(default_controller);
    controller.validate()?;
    let record = SessionRecord {
        id: uuid::Uuid::new_v4().to_string(),
        env,
        baseline,
        build,
        controller,
        seed: req.seed.unwrap_or_else(rand_seed),
        actions: Vec::new(),
    };
    let worker = state.clone();
    let session = blocking(move || {
        let setup = worker.setup(&record.env, record.baseline)?;
        let session = Session::open(record, setup)?;
        worker.store.save(&session.record)?;
        Ok(session)
    })
    .await?;
    let view = session.view();
    state.sessions.write().await.insert(view.id.clone(), Slot::new(session));
    Ok((StatusCode::CREATED, Json(view)))
}

fn rand_seed() -> u64 {
    u64::from_le_bytes(uuid::Uuid::new_v4().as_bytes()[..8].try_into().unwrap())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let slot = state.slot(&id).await?;
    let view = slot.session.read().await.view();
    Ok(Json(view))
}

async fn get_tree(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<policy_tree::export::TreeDocument>, ApiError> {
    let slot = state.slot(&id).await?;
    let doc = slot.session.read().await.tree().clone();
    Ok(Json(doc))
}

async fn history(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Vec<HistoryEntry>>, ApiError> {
    let slot = state.slot(&id).await?;
    let entries = slot.session.read().await.history().to_vec();
    Ok(Json(entries))
}

async fn status(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<StatusView>, ApiError> {
    let slot = state.slot(&id).await?;
    Ok(Json(StatusView {
        id,
        busy: slot.busy.load(Ordering::Acquire),
        step: slot.step.load(Ordering::Acquire),
        finished: slot.finished.load(Ordering::Acquire),
    }))
}

async fn act(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ActOutcome>, ApiError> {
    let req: ActRequest = parse_body(&body)?;
    let slot = state.slot(&id).await?;
    // The write guard travels to the worker so steps on one session are
    // serialized while other sessions proceed.
    let mut guard = slot.session.clone().write_owned().await;
    let store = state.store.clone();
    slot.busy.store(true, Ordering::Release);
    let worker = slot.clone();
    let outcome = blocking(move || {
        let action = match (req.action, req.mode) {
            (Some(a), _) => a,
            (None, ActMode::Approve) => guard
                .view()
                .recommended
                .ok_or_else(|| ApiError::conflict("session is finished"))?,
            (None, ActMode::Override) => return Err(ApiError::bad_request("override requires an action")),
        };
        let outcome = guard.act(action, req.mode)?;
        store.save(&guard.record)?;
        worker.step.store(outcome.session.step, Ordering::Release);
        worker.finished.store(outcome.done, Ordering::Release);
        Ok(outcome)
    })
    .await;
    slot.busy.store(false, Ordering::Release);
    Ok(Json(outcome?))
}
