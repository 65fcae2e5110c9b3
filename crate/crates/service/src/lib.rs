//! HTTP+JSON front end for interactive search sessions.
//!
//! Sessions live in memory. Each one is behind its own async mutex, so
//! concurrent calls on one session queue up while different sessions
//! proceed independently. The catalog and networks are shared read-only.

mod error;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use mixsearch_core::agent::{Action, Checkpoint, QNetwork};
use mixsearch_core::eval::{Policy, PolicyKind};
use mixsearch_core::interactions::InteractionRequest;
use mixsearch_core::session::{Feedback, FeedbackSource, StepRecord};
use mixsearch_core::simuser::{SimulatedUser, UserConfig};
use mixsearch_core::{Catalog, ItemId, SearchContext, SearchSession};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use error::{ApiError, ErrorBody};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// A person answers; with a `target_id` the session reports percentile
    /// ranks (game mode).
    #[default]
    Live,
    /// The server holds a simulated user for the target and answers
    /// `{"kind": "simulated"}` feedback itself.
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub target_id: Option<ItemId>,
    #[serde(default)]
    pub user_seed: Option<u64>,
    /// Path of a checkpoint to use instead of the server default.
    #[serde(default)]
    pub checkpoint: Option<String>,
}

fn default_policy() -> PolicyKind {
    PolicyKind::Rl
}

impl Default for CreateSession {
    fn default() -> Self {
        Self { policy: PolicyKind::Rl, mode: Mode::Live, target_id: None, user_seed: None, checkpoint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub id: ItemId,
    pub attrs: Vec<f64>,
    pub image_uri: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub policy: PolicyKind,
    pub mode: Mode,
    pub iteration: usize,
    pub max_iterations: usize,
    pub attribute_names: Vec<String>,
    pub top_page: Vec<ItemView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestView {
    /// Iteration this request belongs to (1-based).
    pub iteration: usize,
    pub chosen: Action,
    pub action: Action,
    pub request: InteractionRequest,
    pub top_page: Vec<ItemView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResult {
    pub iteration: usize,
    pub record: StepRecord,
    pub top_page: Vec<ItemView>,
    pub finished: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub found: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percentile_rank: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryView {
    pub id: String,
    pub policy: PolicyKind,
    pub mode: Mode,
    pub iteration: usize,
    pub finished: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub found: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_percentile_rank: Option<f64>,
    pub records: Vec<StepRecord>,
}

struct Entry {
    kind: PolicyKind,
    mode: Mode,
    policy: Policy,
    session: SearchSession,
    user: Option<SimulatedUser>,
    initial_percentile_rank: Option<f64>,
}

/// Shared server state.
pub struct AppState {
    ctx: Arc<SearchContext>,
    user_cfg: UserConfig,
    default_network: Option<Arc<QNetwork>>,
    checkpoints: Mutex<HashMap<String, Arc<QNetwork>>>,
    sessions: RwLock<HashMap<String, Arc<tokio::sync::Mutex<Entry>>>>,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(
        ctx: Arc<SearchContext>,
        user_cfg: UserConfig,
        default_checkpoint: Option<&Checkpoint>,
    ) -> Result<Arc<Self>, ApiError> {
        let default_network = default_checkpoint.map(|cp| network_for(&ctx, cp)).transpose()?;
        Ok(Arc::new(Self {
            ctx,
            user_cfg,
            default_network,
            checkpoints: Mutex::new(HashMap::new()),
            sessions: RwLock::new(HashMap::new()),
            counter: AtomicU64::new(0),
        }))
    }

    pub fn catalog(&self) -> &Catalog {
        self.ctx.catalog()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    fn network(&self, path: Option<&str>) -> Result<Arc<QNetwork>, ApiError> {
        let Some(path) = path else {
            return self
                .default_network
                .clone()
                .ok_or_else(|| ApiError::BadCheckpoint("the server was started without a checkpoint".into()));
        };
        if let Some(net) = self.checkpoints.lock().expect("checkpoint cache poisoned").get(path) {
            return Ok(net.clone());
        }
        let cp = Checkpoint::load(path).map_err(|e| ApiError::BadCheckpoint(format!("{path}: {e}")))?;
        let net = network_for(&self.ctx, &cp)?;
        self.checkpoints.lock().expect("checkpoint cache poisoned").insert(path.to_string(), net.clone());
        Ok(net)
    }

    fn entry(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Entry>>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session `{id}`")))
    }

    fn fresh_id(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        format!("{n:x}-{:016x}", rand::random::<u64>())
    }

    fn item_views(&self, ids: &[ItemId]) -> Vec<ItemView> {
        ids.iter()
            .map(|&id| {
                let item = &self.catalog().items()[id];
                ItemView { id, attrs: item.attrs.clone(), image_uri: item.image_uri.clone() }
            })
            .collect()
    }
}

fn network_for(ctx: &SearchContext, cp: &Checkpoint) -> Result<Arc<QNetwork>, ApiError> {
    if cp.shape.state != ctx.state_shape() {
        return Err(ApiError::BadCheckpoint(format!(
            "checkpoint expects state {:?}, catalog gives {:?}",
            cp.shape.state,
            ctx.state_shape()
        )));
    }
    cp.network().map(Arc::new).map_err(|e| ApiError::BadCheckpoint(e.to_string()))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/request", get(get_request))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .route("/sessions/{id}/history", get(get_history))
        .route("/catalog/items/{id}", get(get_item))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

fn body<T: serde::de::DeserializeOwned>(payload: Result<Json<Value>, JsonRejection>) -> Result<T, ApiError> {
    let Json(value) = payload.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    serde_json::from_value(value).map_err(|e| ApiError::BadRequest(e.to_string()))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<Value>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let req: CreateSession = body(payload)?;
    let policy = match req.policy {
        PolicyKind::Rl => Policy::Rl(state.network(req.checkpoint.as_deref())?),
        PolicyKind::Ws => Policy::Ws,
        PolicyKind::Prr => Policy::Prr,
        PolicyKind::SkPrr => Policy::SkPrr,
    };
    if let Some(t) = req.target_id {
        if t >= state.catalog().len() {
            return Err(ApiError::BadRequest(format!("target {t} is not in the catalog")));
        }
    }
    let user = match (req.mode, req.target_id) {
        (Mode::Simulated, None) => return Err(ApiError::BadRequest("simulated mode needs a target_id".into())),
        (Mode::Simulated, Some(t)) => {
            Some(SimulatedUser::from_config(state.catalog(), t, &state.user_cfg, req.user_seed.unwrap_or(0)))
        }
        (Mode::Live, _) => None,
    };
    let session = SearchSession::new(state.ctx.clone(), req.target_id)?;
    let id = state.fresh_id();
    let created = SessionCreated {
        id: id.clone(),
        policy: req.policy,
        mode: req.mode,
        iteration: 0,
        max_iterations: state.ctx.config().max_iterations,
        attribute_names: state.catalog().attribute_names().to_vec(),
        top_page: state.item_views(session.top_page()),
    };
    let entry = Entry {
        kind: req.policy,
        mode: req.mode,
        policy,
        initial_percentile_rank: session.percentile_rank(),
        session,
        user,
    };
    state.sessions.write().expect("session map poisoned").insert(id, Arc::new(tokio::sync::Mutex::new(entry)));
    Ok((StatusCode::CREATED, Json(created)))
}

/// Runs the policy unless a request is already pending, so repeated
/// fetches return the same request.
fn ensure_request(session: &mut SearchSession, policy: &Policy) -> Result<(), ApiError> {
    if session.pending_request().is_none() {
        let state = session.encode_state()?;
        let chosen = policy.choose_for(&state, session.iteration())?;
        session.plan(chosen)?;
    }
    Ok(())
}

async fn get_request(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<RequestView>, ApiError> {
    let entry = state.entry(&id)?;
    let mut e = entry.lock().await;
    if e.session.is_finished() {
        return Err(mixsearch_core::SessionError::Finished.into());
    }
    let e = &mut *e;
    ensure_request(&mut e.session, &e.policy)?;
    let (chosen, action) = e.session.pending_actions().expect("request planned");
    Ok(Json(RequestView {
        iteration: e.session.iteration() + 1,
        chosen,
        action,
        request: e.session.pending_request().expect("request planned").clone(),
        top_page: state.item_views(e.session.top_page()),
    }))
}

async fn post_feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<Value>, JsonRejection>,
) -> Result<Json<FeedbackResult>, ApiError> {
    let Json(value) = payload.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let entry = state.entry(&id)?;
    let mut e = entry.lock().await;
    let e = &mut *e;
    if e.session.is_finished() {
        return Err(mixsearch_core::SessionError::Finished.into());
    }
    let feedback = if value.get("kind").and_then(Value::as_str) == Some("simulated") {
        let user = e
            .user
            .as_mut()
            .ok_or_else(|| ApiError::BadRequest("only simulated sessions accept simulated feedback".into()))?;
        ensure_request(&mut e.session, &e.policy)?;
        let request = e.session.pending_request().expect("request planned").clone();
        user.respond(&request, e.session.top_page(), state.catalog())
    } else {
        serde_json::from_value::<Feedback>(value).map_err(|err| ApiError::BadRequest(err.to_string()))?
    };
    let record = e.session.apply(feedback)?.clone();
    let known_target = e.session.target().is_some();
    Ok(Json(FeedbackResult {
        iteration: e.session.iteration(),
        top_page: state.item_views(&record.top_page),
        finished: e.session.is_finished(),
        found: known_target.then(|| e.session.found()),
        percentile_rank: e.session.percentile_rank(),
        record,
    }))
}

async fn get_history(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<HistoryView>, ApiError> {
    let entry = state.entry(&id)?;
    let e = entry.lock().await;
    Ok(Json(HistoryView {
        id,
        policy: e.kind,
        mode: e.mode,
        iteration: e.session.iteration(),
        finished: e.session.is_finished(),
        found: e.session.target().map(|_| e.session.found()),
        initial_percentile_rank: e.initial_percentile_rank,
        records: e.session.records().to_vec(),
    }))
}

async fn get_item(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<mixsearch_core::Item>, ApiError> {
    let parsed: ItemId = id.parse().map_err(|_| ApiError::BadRequest(format!("`{id}` is not an item id")))?;
    state
        .catalog()
        .item(parsed)
        .cloned()
        .map(Json)
        .map_err(|_| ApiError::NotFound(format!("no item {parsed}")))
}
