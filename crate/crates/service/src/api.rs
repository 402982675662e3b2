use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{broadcast, watch};

use tacos::SwarmState;

use crate::config::ServiceConfig;
use crate::session::{Session, SessionEvent, SessionOptions, SubmitError};

/// Telemetry is re-sent at least this often even when nothing moves.
pub const TELEMETRY_INTERVAL: Duration = Duration::from_millis(200);

pub struct AppState {
    cfg: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Arc<Self> {
        Arc::new(Self { cfg, sessions: RwLock::new(HashMap::new()), next_id: AtomicU64::new(1) })
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn create_session(&self, opts: &SessionOptions) -> Result<Arc<Session>, String> {
        let id = format!("s{:04}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let s = Session::new(id.clone(), &self.cfg, opts)?;
        self.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id, s.clone());
        Ok(s)
    }
}

pub struct ApiError(StatusCode, serde_json::Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn not_found(what: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, json!({ "error": "NotFound", "detail": what }))
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        let status = match &e {
            SubmitError::BusyWithPlan { .. } | SubmitError::Superseded => StatusCode::CONFLICT,
            SubmitError::EmptyInstruction => StatusCode::BAD_REQUEST,
            SubmitError::ParseFailure { .. } | SubmitError::ValidationFailure { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            SubmitError::BackendError { .. } => StatusCode::BAD_GATEWAY,
            SubmitError::Internal { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = serde_json::to_value(&e).expect("error serializes");
        body["message"] = json!(e.to_string());
        ApiError(status, body)
    }
}

type Shared = Arc<AppState>;

fn find(app: &AppState, id: &str) -> Result<Arc<Session>, ApiError> {
    app.session(id).ok_or_else(|| not_found(&format!("session {id}")))
}

pub fn router(app: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}/instruction", post(instruction))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/plan", get(plan))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/history", get(history))
        .route("/sessions/{id}/world", get(world))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/sessions/{id}/trace", get(trace))
        .route("/sessions/{id}/telemetry", get(telemetry))
        .with_state(app)
}

async fn create(State(app): State<Shared>, body: Option<Json<SessionOptions>>) -> Result<Response, ApiError> {
    let opts = body.map(|Json(o)| o).unwrap_or_default();
    let s = app.create_session(&opts).map_err(|e| ApiError(StatusCode::BAD_REQUEST, json!({ "error": "BadSession", "detail": e })))?;
    let state = s.state();
    let ids: Vec<&str> = state.swarm.uavs.iter().map(|u| u.id.as_str()).collect();
    let body = json!({ "id": s.id, "scenario": s.scenario, "mode": s.mode, "uavs": ids });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn list(State(app): State<Shared>) -> Json<Vec<String>> {
    let mut ids: Vec<String> = app.sessions.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect();
    ids.sort();
    Json(ids)
}

#[derive(Deserialize)]
struct InstructionBody {
    text: String,
    #[serde(default)]
    preempt: bool,
}

async fn instruction(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<InstructionBody>,
) -> Result<Response, ApiError> {
    let s = find(&app, &id)?;
    let view = s.submit(body.text, body.preempt).await?;
    Ok((StatusCode::ACCEPTED, Json(view)).into_response())
}

async fn state(State(app): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(find(&app, &id)?.state()).into_response())
}

async fn plan(State(app): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let p = find(&app, &id)?.plan().ok_or_else(|| not_found("no plan yet"))?;
    Ok(Json(p).into_response())
}

async fn report(State(app): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let r = find(&app, &id)?.report().ok_or_else(|| not_found("no finished plan yet"))?;
    Ok(Json(r).into_response())
}

async fn history(State(app): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let h = find(&app, &id)?.history().ok_or_else(|| not_found("this mode keeps no coordinator history"))?;
    Ok(Json(h).into_response())
}

async fn world(State(app): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = find(&app, &id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], s.world().to_json()).into_response())
}

async fn transcript(State(app): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = find(&app, &id)?;
    let mut out = Vec::new();
    s.transcript().write_jsonl(&mut out).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": e.to_string() })))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response())
}

/// Waits for a running plan to finish before answering.
async fn trace(State(app): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = find(&app, &id)?;
    let text = tokio::task::spawn_blocking(move || s.trace_jsonl())
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": e.to_string() })))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

fn snapshot_event(s: &SwarmState) -> Event {
    let data = json!({ "sim_time": s.sim_time, "uavs": s.uavs, "text": s.render() });
    Event::default().event("telemetry").data(data.to_string())
}

fn session_event(e: &SessionEvent) -> Event {
    Event::default().event(e.name()).data(serde_json::to_string(e).expect("event serializes"))
}

struct Feed {
    snapshots: watch::Receiver<Arc<SwarmState>>,
    events: broadcast::Receiver<SessionEvent>,
    ticker: tokio::time::Interval,
    first: Option<Arc<SwarmState>>,
    last_time: f64,
}

impl Feed {
    /// Emits `s` unless it is older than what this subscriber already saw.
    fn snapshot(&mut self, s: &SwarmState) -> Option<Event> {
        (s.sim_time >= self.last_time).then(|| {
            self.last_time = s.sim_time;
            snapshot_event(s)
        })
    }

    async fn next(&mut self) -> Option<Event> {
        if let Some(s) = self.first.take() {
            return self.snapshot(&s);
        }
        loop {
            tokio::select! {
                biased;
                e = self.events.recv() => match e {
                    Ok(e) => return Some(session_event(&e)),
                    Err(broadcast::error::RecvError::Lagged(n)) => tracing::debug!("subscriber skipped {n} events"),
                    Err(broadcast::error::RecvError::Closed) => return None,
                },
                changed = self.snapshots.changed() => {
                    if changed.is_err() {
                        return None;
                    }
                    let s = self.snapshots.borrow_and_update().clone();
                    if let Some(ev) = self.snapshot(&s) {
                        return Some(ev);
                    }
                }
                _ = self.ticker.tick() => {
                    let s = self.snapshots.borrow().clone();
                    if let Some(ev) = self.snapshot(&s) {
                        return Some(ev);
                    }
                }
            }
        }
    }
}

/// Server-sent events: the current snapshot first, then snapshots at least
/// every [`TELEMETRY_INTERVAL`] plus plan, cycle and report events.
async fn telemetry(
    State(app): State<Shared>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let s = find(&app, &id)?;
    let mut snapshots = s.telemetry();
    let first = snapshots.borrow_and_update().clone();
    let mut ticker = tokio::time::interval(TELEMETRY_INTERVAL);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    ticker.reset();
    let feed = Feed { snapshots, events: s.events(), ticker, first: Some(first), last_time: f64::NEG_INFINITY };
    let stream = futures::stream::unfold(feed, |mut f| async move { f.next().await.map(|e| (Ok(e), f)) });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
