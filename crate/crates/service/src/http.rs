//! Routes, handlers and the per-session event fan-out.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Mutex};

use crate::error::ApiError;
use crate::session::{
    resolve_link_model, ApiSession, CreateSession, Event, GraphResponse, GraphViewKind, Metrics, RelaysRequest,
    RelaysResponse, SessionView, StepRequest, StepResponse,
};
use crate::store::Store;

const EVENT_BUFFER: usize = 256;

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    /// Snapshot directory; sessions are kept in memory only when unset.
    pub store_dir: Option<PathBuf>,
    /// Static bearer token required on every request when set.
    pub token: Option<String>,
}

struct Slot {
    session: Mutex<ApiSession>,
    events: broadcast::Sender<Event>,
}

impl Slot {
    fn new(s: ApiSession) -> Arc<Self> {
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        Arc::new(Slot { session: Mutex::new(s), events })
    }
}

struct Inner {
    sessions: RwLock<BTreeMap<String, Arc<Slot>>>,
    next_id: AtomicU64,
    store: Option<Store>,
    token: Option<String>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

fn session_id(n: u64) -> String {
    format!("s{n:06}")
}

impl AppState {
    /// Opens the store, if any, and restores every saved session.
    pub fn new(config: ServiceConfig) -> std::io::Result<Self> {
        let store = config.store_dir.map(Store::open).transpose()?;
        let mut sessions = BTreeMap::new();
        let mut next = 1;
        if let Some(st) = &store {
            for s in st.load_all()? {
                if let Some(n) = s.session_id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                    next = next.max(n + 1);
                }
                sessions.insert(s.session_id.clone(), Slot::new(s));
            }
        }
        Ok(AppState(Arc::new(Inner {
            sessions: RwLock::new(sessions),
            next_id: AtomicU64::new(next),
            store,
            token: config.token,
        })))
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.0
            .sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    fn save(&self, s: &ApiSession) -> Result<(), ApiError> {
        match &self.0.store {
            Some(st) => st.save(s),
            None => Ok(()),
        }
    }

    /// Persists and broadcasts the events `s` gained since `mark`.
    fn publish(&self, slot: &Slot, s: &ApiSession, mark: usize) -> Result<(), ApiError> {
        if s.events.len() == mark {
            return Ok(());
        }
        self.save(s)?;
        for ev in &s.events[mark..] {
            // No subscribers is fine.
            let _ = slot.events.send(ev.clone());
        }
        Ok(())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/graph", get(get_graph))
        .route("/sessions/{id}/relays", post(post_relays))
        .route("/sessions/{id}/step", post(post_step))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/events", get(get_events))
        .route("/sessions/{id}/events/log", get(get_event_log))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Binds `addr` and serves until the task is dropped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let Some(token) = &state.0.token else { return next.run(req).await };
    let bearer = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    // Browsers cannot set headers on an EventSource, so a query token is
    // accepted too.
    let query = req
        .uri()
        .query()
        .into_iter()
        .flat_map(|q| q.split('&'))
        .find_map(|kv| kv.strip_prefix("token="));
    if bearer == Some(token.as_str()) || query == Some(token.as_str()) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong token").into_response()
    }
}

fn body<T>(r: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    r.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn query<T>(r: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    r.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub session: SessionView,
}

async fn create_session(
    State(state): State<AppState>,
    req: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let req = body(req)?;
    req.scenario.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let model = {
        let req = req.clone();
        tokio::task::spawn_blocking(move || resolve_link_model(&req))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??
    };
    let id = session_id(state.0.next_id.fetch_add(1, Ordering::SeqCst));
    let s = ApiSession::create(id.clone(), req, model)?;
    state.save(&s)?;
    let view = s.view();
    state.0.sessions.write().expect("session map lock").insert(id.clone(), Slot::new(s));
    Ok((StatusCode::CREATED, Json(Created { session_id: id, session: view })))
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(state.0.sessions.read().expect("session map lock").keys().cloned().collect())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    Ok(Json(s.view()))
}

#[derive(Debug, Deserialize)]
struct GraphQuery {
    #[serde(default)]
    view: Option<GraphViewKind>,
}

async fn get_graph(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<GraphQuery>, QueryRejection>,
) -> Result<Json<GraphResponse>, ApiError> {
    let q = query(q)?;
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    Ok(Json(s.graph(q.view.unwrap_or(GraphViewKind::Hybrid))))
}

async fn post_relays(
    State(state): State<AppState>,
    Path(id): Path<String>,
    req: Result<Json<RelaysRequest>, JsonRejection>,
) -> Result<Json<RelaysResponse>, ApiError> {
    let req = body(req)?;
    let slot = state.slot(&id)?;
    let mut s = slot.session.lock().await;
    let mark = s.events.len();
    let out = s.apply_relays(req);
    state.publish(&slot, &s, mark)?;
    Ok(Json(out?))
}

async fn post_step(
    State(state): State<AppState>,
    Path(id): Path<String>,
    req: Result<Json<StepRequest>, JsonRejection>,
) -> Result<Json<StepResponse>, ApiError> {
    let req = body(req)?;
    let slot = state.slot(&id)?;
    let mut s = slot.session.lock().await;
    let mark = s.events.len();
    let out = s.apply_step(req);
    state.publish(&slot, &s, mark)?;
    Ok(Json(out?))
}

async fn get_metrics(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Metrics>, ApiError> {
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    Ok(Json(s.metrics()))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    /// Only events with a larger sequence number are sent.
    #[serde(default)]
    since: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
}

fn after(events: &[Event], since: Option<u64>) -> Vec<Event> {
    events.iter().filter(|e| since.is_none_or(|s| e.seq > s)).cloned().collect()
}

fn sse_event(ev: &Event) -> SseEvent {
    let kind = serde_json::to_value(&ev.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    SseEvent::default().id(ev.seq.to_string()).event(kind).json_data(ev).expect("events serialize")
}

/// Server-sent events: the backlog after `since` (or the `Last-Event-ID`
/// header), then live events. A subscriber that falls too far behind is
/// disconnected and resumes by reconnecting.
async fn get_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    q: Result<Query<EventsQuery>, QueryRejection>,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let q = query(q)?;
    let since = q.since.or_else(|| {
        headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.trim().parse().ok())
    });
    let slot = state.slot(&id)?;
    // Subscribing under the session lock keeps backlog and live events
    // free of gaps and duplicates.
    let (backlog, rx) = {
        let s = slot.session.lock().await;
        (after(&s.events, since), slot.events.subscribe())
    };
    let live = stream::unfold(rx, |mut rx| async move {
        match rx.recv().await {
            Ok(ev) => Some((ev, rx)),
            Err(_) => None,
        }
    });
    let all = stream::iter(backlog).chain(live).map(|ev| Ok(sse_event(&ev)));
    Ok(Sse::new(all).keep_alive(KeepAlive::default()))
}

/// Polling fallback for clients without event-stream support.
async fn get_event_log(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<EventsQuery>, QueryRejection>,
) -> Result<Json<EventLog>, ApiError> {
    let q = query(q)?;
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    Ok(Json(EventLog { events: after(&s.events, q.since) }))
}
