//! HTTP/JSON interface to live sessions. Payloads are documented in
//! docs/api.md.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use predstop_core::study::PermutationSummary;
use predstop_core::trial::LookValues;
use predstop_core::{Decision, LookRecord, PlanSpec, TrajectoryRecord, TrialPlan};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::session::{derived_seed, Observation, Session, SessionError, Status, WhatIfRequest};
use crate::store::Store;

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Validation { message: String, index: Option<usize> },
    Conflict(String),
    Internal(String),
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Validation { message, index } => ApiError::Validation { message, index },
            SessionError::Conflict(m) => ApiError::Conflict(m),
            SessionError::Internal(m) => ApiError::Internal(m),
        }
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::Internal(format!("storage: {e}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, message, index) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "not_found", m, None),
            ApiError::Validation { message, index } => (StatusCode::UNPROCESSABLE_ENTITY, "validation", message, index),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, "conflict", m, None),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", m, None),
        };
        let mut err = json!({ "kind": kind, "message": message });
        if let Some(i) = index {
            err["index"] = json!(i);
        }
        (status, Json(json!({ "error": err }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::Validation {
        message: format!("request body {}:{}: {e}", e.line(), e.column()),
        index: None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Running,
    Done { result: PermutationView },
    Failed { message: String },
}

type SessionRef = Arc<RwLock<Session>>;

pub struct AppState {
    store: Store,
    sessions: RwLock<BTreeMap<String, SessionRef>>,
    jobs: Mutex<BTreeMap<String, JobState>>,
    server_seed: Option<u64>,
}

impl AppState {
    /// State backed by `store`, with sessions recovered from it. Analyses
    /// missing from a log (lost in a crash) are recomputed and appended.
    pub fn new(store: Store, recovered: Vec<Session>, server_seed: Option<u64>) -> anyhow::Result<Self> {
        let mut map = BTreeMap::new();
        for mut s in recovered {
            let events = s.catch_up(Utc::now()).map_err(|e| anyhow::anyhow!("{}: {e}", s.id))?;
            store.append(&s.id, &events)?;
            map.insert(s.id.clone(), Arc::new(RwLock::new(s)));
        }
        Ok(Self {
            store,
            sessions: RwLock::new(map),
            jobs: Mutex::new(BTreeMap::new()),
            server_seed,
        })
    }

    fn session(&self, id: &str) -> ApiResult<SessionRef> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session '{id}'")))
    }
}

pub type Shared = Arc<AppState>;

pub fn router(state: Shared, console: Option<PathBuf>) -> Router {
    let r = Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/plans/validate", post(validate_plan))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/observations", post(append_observations))
        .route("/sessions/{id}/analysis", get(get_analysis))
        .route("/sessions/{id}/trajectory", get(get_trajectory))
        .route("/sessions/{id}/whatif", post(post_whatif))
        .route("/sessions/{id}/permutations", post(start_permutations))
        .route("/jobs/{id}", get(get_job))
        .with_state(state);
    match console {
        Some(dir) => r.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => r,
    }
}

/// A copy of the session with its runner built, so boundary calibration
/// happens once per session rather than once per request.
fn snapshot(s: &SessionRef) -> ApiResult<Session> {
    {
        let ready = s.read().expect("session lock").runner_ready();
        if !ready {
            s.write().expect("session lock").runner()?;
        }
    }
    Ok(s.read().expect("session lock").clone())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub fingerprint: String,
    pub status: Status,
    pub n_observed: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub fingerprint: String,
    pub seed: u64,
    pub plan: TrialPlan,
    pub status: Status,
    pub n_observed: usize,
    pub next_look: Option<usize>,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisView {
    pub session_id: String,
    pub fingerprint: String,
    pub status: Status,
    pub n_observed: usize,
    pub n: usize,
    pub next_look: Option<usize>,
    pub latest: Option<LookRecord>,
    pub recommendation: Option<Decision>,
    /// Values at n_observed when requested with `?current=true`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub current: Option<LookValues>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryView {
    pub session_id: String,
    pub fingerprint: String,
    pub status: Status,
    pub trajectory: TrajectoryRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhatIfView {
    pub session_id: String,
    pub fingerprint: String,
    pub whatif_fingerprint: String,
    pub plan: TrialPlan,
    pub trajectory: TrajectoryRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PermutationView {
    pub session_id: String,
    pub fingerprint: String,
    pub n_perms: usize,
    pub below_theta_l: f64,
    pub below_se: f64,
    pub above_theta_u: f64,
    pub above_se: f64,
    /// Present when the request asked for them.
    pub trajectories: Option<Vec<TrajectoryRecord>>,
}

fn summary(s: &Session) -> SessionSummary {
    SessionSummary {
        id: s.id.clone(),
        fingerprint: s.fingerprint(),
        status: s.status(),
        n_observed: s.observations.len(),
        n: s.plan.n,
    }
}

fn session_view(s: &Session) -> SessionView {
    SessionView {
        id: s.id.clone(),
        fingerprint: s.fingerprint(),
        seed: s.seed,
        plan: s.plan.clone(),
        status: s.status(),
        n_observed: s.observations.len(),
        next_look: s.next_look(),
        observations: s.observations.clone(),
    }
}

pub fn analysis_view(s: &Session) -> AnalysisView {
    AnalysisView {
        session_id: s.id.clone(),
        fingerprint: s.fingerprint(),
        status: s.status(),
        n_observed: s.observations.len(),
        n: s.plan.n,
        next_look: s.next_look(),
        latest: s.analyses.last().copied(),
        recommendation: s.recommendation(),
        current: None,
    }
}

pub fn trajectory_view(s: &Session) -> TrajectoryView {
    TrajectoryView {
        session_id: s.id.clone(),
        fingerprint: s.fingerprint(),
        status: s.status(),
        trajectory: s.trajectory(),
    }
}

async fn validate_plan(body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let spec: PlanSpec = parse_body(&body)?;
    let plan = spec.resolve().map_err(SessionError::from)?;
    Ok(Json(json!({ "fingerprint": format!("{:016x}", plan.fingerprint()), "plan": plan })))
}

async fn list_sessions(State(st): State<Shared>) -> Json<Vec<SessionSummary>> {
    let map = st.sessions.read().expect("session map lock");
    Json(map.values().map(|s| summary(&s.read().expect("session lock"))).collect())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    plan: PlanSpec,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    id: Option<String>,
}

async fn create_session(State(st): State<Shared>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let req: CreateRequest = parse_body(&body)?;
    let plan = req.plan.resolve().map_err(SessionError::from)?;
    let view = blocking(move || {
        let id = req.id.unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
        let seed = req.seed.unwrap_or_else(|| derived_seed(&id, st.server_seed));
        let (s, created) = Session::create(id.clone(), seed, plan, Utc::now())?;
        let mut map = st.sessions.write().expect("session map lock");
        if map.contains_key(&id) {
            return Err(ApiError::Conflict(format!("session '{id}' exists")));
        }
        st.store.create(&id, &created)?;
        let view = session_view(&s);
        map.insert(id, Arc::new(RwLock::new(s)));
        Ok(view)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let s = st.session(&id)?;
    let view = session_view(&s.read().expect("session lock"));
    Ok(Json(view))
}

async fn delete_session(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let removed = st.sessions.write().expect("session map lock").remove(&id);
    match removed {
        Some(s) => {
            let _guard = s.write().expect("session lock");
            st.store.delete(&id)?;
            Ok(StatusCode::NO_CONTENT)
        }
        None => Err(ApiError::NotFound(format!("no session '{id}'"))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AppendRequest {
    values: Vec<serde_json::Value>,
}

async fn append_observations(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<AnalysisView>> {
    let req: AppendRequest = parse_body(&body)?;
    let s = st.session(&id)?;
    let view = blocking(move || {
        let mut guard = s.write().expect("session lock");
        let before = guard.clone();
        let events = guard.append(&req.values, Utc::now())?;
        if let Err(e) = st.store.append(&id, &events) {
            *guard = before;
            return Err(e.into());
        }
        Ok(analysis_view(&guard))
    })
    .await?;
    Ok(Json(view))
}

#[derive(Debug, Default, Deserialize)]
struct AnalysisQuery {
    #[serde(default)]
    current: bool,
}

async fn get_analysis(State(st): State<Shared>, Path(id): Path<String>, Query(q): Query<AnalysisQuery>) -> ApiResult<Json<AnalysisView>> {
    let s = st.session(&id)?;
    if !q.current {
        let view = analysis_view(&s.read().expect("session lock"));
        return Ok(Json(view));
    }
    let view = blocking(move || {
        let mut work = snapshot(&s)?;
        let current = work.current_values()?;
        Ok(AnalysisView { current, ..analysis_view(&work) })
    })
    .await?;
    Ok(Json(view))
}

async fn get_trajectory(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<TrajectoryView>> {
    let s = st.session(&id)?;
    let view = trajectory_view(&s.read().expect("session lock"));
    Ok(Json(view))
}

async fn post_whatif(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<WhatIfView>> {
    let req: WhatIfRequest = parse_body(&body)?;
    let s = st.session(&id)?;
    let view = blocking(move || {
        // a clone keeps the committed session untouched even if the
        // evaluation fails part way
        let mut work = snapshot(&s)?;
        let (plan, trajectory) = work.whatif(&req)?;
        let guard = s.write().expect("session lock");
        st.store.append(&id, &[crate::session::Event::WhatIf { at: Utc::now(), request: req }])?;
        Ok(WhatIfView {
            session_id: guard.id.clone(),
            fingerprint: guard.fingerprint(),
            whatif_fingerprint: format!("{:016x}", plan.fingerprint()),
            plan,
            trajectory,
        })
    })
    .await?;
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PermutationRequest {
    n_perms: usize,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    include_trajectories: bool,
}

fn permutation_view(s: &Session, p: PermutationSummary, include: bool) -> PermutationView {
    PermutationView {
        session_id: s.id.clone(),
        fingerprint: s.fingerprint(),
        n_perms: p.n_perms,
        below_theta_l: p.below_theta_l,
        below_se: p.below_se,
        above_theta_u: p.above_theta_u,
        above_se: p.above_se,
        trajectories: include.then_some(p.trajectories),
    }
}

async fn start_permutations(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let req: PermutationRequest = parse_body(&body)?;
    let s = st.session(&id)?;
    let (job, snap) = blocking(move || {
        let mut work = snapshot(&s)?;
        Ok((work.permutations(req.n_perms, req.seed)?, work))
    })
    .await?;
    let job_id = uuid::Uuid::new_v4().simple().to_string();
    st.jobs.lock().expect("job lock").insert(job_id.clone(), JobState::Running);
    let fingerprint = snap.fingerprint();
    let st2 = st.clone();
    let jid = job_id.clone();
    tokio::task::spawn_blocking(move || {
        let state = match job.run() {
            Ok(p) => JobState::Done {
                result: permutation_view(&snap, p, req.include_trajectories),
            },
            Err(e) => JobState::Failed { message: e.to_string() },
        };
        st2.jobs.lock().expect("job lock").insert(jid, state);
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "job_id": job_id, "session_id": id, "fingerprint": fingerprint })),
    ))
}

async fn get_job(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let jobs = st.jobs.lock().expect("job lock");
    let job = jobs.get(&id).ok_or_else(|| ApiError::NotFound(format!("no job '{id}'")))?;
    Ok(Json(json!({ "job_id": id, "job": job })))
}
