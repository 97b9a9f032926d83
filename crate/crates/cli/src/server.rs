//! HTTP and event-stream endpoints for the browser console.
//!
//! Sessions run on blocking threads; every mutation re-derives the UI
//! frames for session events that have not been mirrored yet and wakes the
//! subscribers of that session.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use looppilot::gateway::{Transcript, TranscriptMeta};
use looppilot::promptstore::{NewEntry, PromptStore, StoreError};
use looppilot::runner::{make_adapter, scenario_choice, LlmChoice};
use looppilot::scenario::Scenario;
use looppilot::session::{Session, SessionError};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::watch;

use crate::ui::{frames_for, UiEvent, UiEventType};

/// Frames mirrored from one session, plus a length signal for tails.
struct EventLog {
    frames: RwLock<Vec<UiEvent>>,
    len: watch::Sender<usize>,
}

impl EventLog {
    fn new() -> Self {
        Self {
            frames: RwLock::new(Vec::new()),
            len: watch::channel(0).0,
        }
    }

    fn push(&self, session_id: &str, kind: UiEventType, payload: Value) {
        let mut frames = self.frames.write().expect("log lock");
        let seq = frames.len() as u64;
        frames.push(UiEvent {
            kind,
            session_id: session_id.to_string(),
            seq,
            payload,
        });
        let n = frames.len();
        drop(frames);
        self.len.send_replace(n);
    }

    fn get(&self, seq: usize) -> Option<UiEvent> {
        self.frames.read().expect("log lock").get(seq).cloned()
    }

    fn len(&self) -> usize {
        self.frames.read().expect("log lock").len()
    }
}

struct Slot {
    id: String,
    scenario: String,
    session: Mutex<Session>,
    /// Session events already turned into frames.
    mirrored: Mutex<usize>,
    log: EventLog,
}

impl Slot {
    /// Mirrors new session events; call with the session lock held.
    fn sync(&self, session: &Session) {
        let mut mirrored = self.mirrored.lock().expect("mirror lock");
        for logged in &session.events()[*mirrored..] {
            for (kind, payload) in frames_for(&logged.event) {
                self.log.push(&self.id, kind, payload);
            }
        }
        *mirrored = session.events().len();
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    sessions: RwLock<BTreeMap<String, Arc<Slot>>>,
    next_id: Mutex<u64>,
    store: Option<Mutex<PromptStore>>,
    shutdown: watch::Receiver<bool>,
}

impl AppState {
    /// `shutdown` ends every open event stream when it turns true.
    pub fn new(store: Option<PromptStore>, shutdown: watch::Receiver<bool>) -> Self {
        Self {
            inner: Arc::new(Inner {
                sessions: RwLock::new(BTreeMap::new()),
                next_id: Mutex::new(1),
                store: store.map(Mutex::new),
                shutdown,
            }),
        }
    }

    /// Starts a session for `scenario` and returns its id.
    pub fn add_session(
        &self,
        mut scenario: Scenario,
        llm: Option<LlmChoice>,
        auto_approve: bool,
    ) -> Result<String, ApiError> {
        scenario.auto_approve |= auto_approve;
        let choice = match llm {
            Some(c) => c,
            None => scenario_choice(&scenario).map_err(ApiError::bad_request)?,
        };
        let (adapter, _) = make_adapter(&scenario, &choice).map_err(ApiError::bad_request)?;
        let session = Session::start(&scenario, adapter).map_err(ApiError::from)?;
        let id = {
            let mut next = self.inner.next_id.lock().expect("id lock");
            let id = format!("s{next}");
            *next += 1;
            id
        };
        let slot = Arc::new(Slot {
            id: id.clone(),
            scenario: scenario.name.clone(),
            session: Mutex::new(session),
            mirrored: Mutex::new(0),
            log: EventLog::new(),
        });
        slot.sync(&slot.session.lock().expect("session lock"));
        self.inner
            .sessions
            .write()
            .expect("sessions lock")
            .insert(id.clone(), slot);
        Ok(id)
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.inner
            .sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    fn broadcast_store_change(&self, payload: Value) {
        for slot in self.inner.sessions.read().expect("sessions lock").values() {
            slot.log.push(&slot.id, UiEventType::StoreChanged, payload.clone());
        }
    }
}

/// JSON error body `{error, message, ...}` with an HTTP status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl std::fmt::Display) -> Self {
        Self {
            status,
            body: json!({ "error": error, "message": message.to_string() }),
        }
    }

    fn bad_request(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", e)
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match &e {
            SessionError::NothingPending => Self::new(StatusCode::CONFLICT, "nothing_pending", &e),
            SessionError::VetoedByValidator(v) => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({ "error": "vetoed", "message": e.to_string(), "violations": v }),
            },
            SessionError::Gateway(_) => Self::new(StatusCode::BAD_GATEWAY, "adapter", &e),
            SessionError::NoDraft | SessionError::WrongMode(_) | SessionError::ApprovalRequired => {
                Self::new(StatusCode::CONFLICT, "session_state", &e)
            }
            _ => Self::new(StatusCode::BAD_REQUEST, "session", &e),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::UnknownEntry(_) => StatusCode::NOT_FOUND,
            StoreError::DuplicateContent { .. } => StatusCode::CONFLICT,
            StoreError::Io(_) | StoreError::Locked(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, "store", e)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.body.get("message").and_then(Value::as_str) {
            Some(m) => f.write_str(m),
            None => write!(f, "{}", self.status),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}/message", post(post_message))
        .route("/sessions/{id}/approval", post(post_approval))
        .route("/sessions/{id}/events", get(events))
        .route("/store", get(store_list).post(store_post))
        .with_state(state)
}

async fn list_sessions(State(state): State<AppState>) -> Json<Value> {
    let sessions = state.inner.sessions.read().expect("sessions lock");
    let rows: Vec<Value> = sessions
        .values()
        .map(|slot| {
            let s = slot.session.lock().expect("session lock");
            json!({
                "id": slot.id,
                "scenario": slot.scenario,
                "mode": s.mode(),
                "events": slot.log.len(),
                "pending": s.pending().is_some(),
            })
        })
        .collect();
    Json(json!({ "sessions": rows }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    /// Scenario TOML text.
    #[serde(default)]
    scenario: Option<String>,
    /// Scenario file on the server.
    #[serde(default)]
    path: Option<PathBuf>,
    #[serde(default)]
    llm: Option<String>,
    #[serde(default)]
    auto_approve: bool,
}

async fn create_session(
    State(state): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let scenario = match (req.scenario, req.path) {
        (Some(text), None) => Scenario::parse(&text).map_err(ApiError::bad_request)?,
        (None, Some(p)) => Scenario::load(&p).map_err(ApiError::bad_request)?,
        _ => return Err(ApiError::bad_request("give exactly one of `scenario` or `path`")),
    };
    let llm = req
        .llm
        .map(|s| s.parse::<LlmChoice>())
        .transpose()
        .map_err(ApiError::bad_request)?;
    let id = tokio::task::spawn_blocking(move || state.add_session(scenario, llm, req.auto_approve))
        .await
        .map_err(ApiError::internal)??;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

/// Runs `f` against the session on a blocking thread and mirrors the
/// events it produced, whether or not it failed.
async fn with_session<T, F>(state: &AppState, id: &str, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, SessionError> + Send + 'static,
{
    let slot = state.slot(id)?;
    tokio::task::spawn_blocking(move || {
        let mut session = slot.session.lock().expect("session lock");
        let out = f(&mut session);
        slot.sync(&session);
        out.map_err(ApiError::from)
    })
    .await
    .map_err(ApiError::internal)?
}

fn pending_json(s: &Session) -> Value {
    match s.pending() {
        Some(p) => json!({ "source": p.source, "violations": p.violations }),
        None => Value::Null,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageBody {
    text: String,
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<MessageBody>,
) -> Result<Json<Value>, ApiError> {
    with_session(&state, &id, move |s| {
        let reply = s.user_message(&body.text)?;
        Ok(Json(json!({
            "reply": reply,
            "pending": pending_json(s),
            "feedback_draft": s.feedback_draft(),
        })))
    })
    .await
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Verdict {
    Approve,
    Reject,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApprovalBody {
    verdict: Verdict,
    #[serde(default)]
    reason: Option<String>,
    #[serde(default)]
    actor: Option<String>,
}

async fn post_approval(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<ApprovalBody>,
) -> Result<Json<Value>, ApiError> {
    with_session(&state, &id, move |s| match body.verdict {
        Verdict::Approve => {
            let actor = body.actor.unwrap_or_else(|| "console".to_string());
            let report = s.approve(&actor)?;
            Ok(Json(json!({ "report": report, "feedback_draft": s.feedback_draft() })))
        }
        Verdict::Reject => {
            let reason = body.reason.unwrap_or_default();
            let draft = s.reject(&reason)?;
            Ok(Json(json!({ "feedback_draft": draft })))
        }
    })
    .await
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: Option<u64>,
}

fn frame(e: &UiEvent) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event("ui_event")
        .data(serde_json::to_string(e).expect("frame serializes"))
}

/// Event stream from `?from=N`, or from one past a `Last-Event-ID` header.
async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Response {
    let slot = match state.slot(&id) {
        Ok(s) => s,
        Err(_) => {
            let body = json!({ "error": "unknown_session", "session_id": id });
            let frame = Event::default().event("error").data(body.to_string());
            let once = stream::once(async move { Ok::<_, Infallible>(frame) });
            return (StatusCode::NOT_FOUND, Sse::new(once)).into_response();
        }
    };
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok())
        .map(|last| last + 1);
    let from = q.from.or(resume).unwrap_or(0) as usize;
    Sse::new(tail(slot, from, state.inner.shutdown.clone()))
        .keep_alive(KeepAlive::default())
        .into_response()
}

fn tail(
    slot: Arc<Slot>,
    from: usize,
    shutdown: watch::Receiver<bool>,
) -> impl Stream<Item = Result<Event, Infallible>> {
    let len = slot.log.len.subscribe();
    stream::unfold(
        (slot, from, len, shutdown),
        |(slot, cursor, mut len, mut shutdown)| async move {
            loop {
                if *shutdown.borrow() {
                    return None;
                }
                if let Some(e) = slot.log.get(cursor) {
                    return Some((frame(&e), (slot, cursor + 1, len, shutdown)));
                }
                tokio::select! {
                    changed = len.changed() => if changed.is_err() { return None },
                    _ = shutdown.changed() => {}
                }
            }
        },
    )
    .map(Ok)
}

#[derive(Debug, Deserialize)]
struct StoreQuery {
    #[serde(default)]
    category: Option<String>,
}

fn store(state: &AppState) -> Result<&Mutex<PromptStore>, ApiError> {
    state
        .inner
        .store
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_store", "server has no prompt store"))
}

async fn store_list(
    State(state): State<AppState>,
    Query(q): Query<StoreQuery>,
) -> Result<Json<Value>, ApiError> {
    let store = store(&state)?.lock().expect("store lock");
    let entries = match q.category {
        Some(c) => store.list(&c)?,
        None => store.all()?,
    };
    Ok(Json(json!({ "categories": store.categories(), "entries": entries })))
}

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
enum StoreOp {
    Add {
        category: String,
        title: String,
        dialogue: Vec<looppilot::gateway::ChatMessage>,
        #[serde(default)]
        tags: Vec<String>,
    },
    Vote {
        entry_id: String,
        delta: i32,
        voter: String,
    },
}

async fn store_post(
    State(state): State<AppState>,
    Json(op): Json<StoreOp>,
) -> Result<Json<Value>, ApiError> {
    let (response, change) = {
        let store = store(&state)?.lock().expect("store lock");
        match op {
            StoreOp::Add {
                category,
                title,
                dialogue,
                tags,
            } => {
                let dialogue = Transcript {
                    meta: TranscriptMeta::new("console", "console"),
                    messages: dialogue,
                };
                let id = store.add(NewEntry {
                    category,
                    title,
                    dialogue,
                    tags,
                })?;
                (json!({ "id": id }), json!({ "action": "added", "entry_id": id }))
            }
            StoreOp::Vote {
                entry_id,
                delta,
                voter,
            } => {
                let score = store.vote(&entry_id, delta, &voter)?;
                (
                    json!({ "id": entry_id, "score": score }),
                    json!({ "action": "voted", "entry_id": entry_id, "score": score }),
                )
            }
        }
    };
    state.broadcast_store_change(change);
    Ok(Json(response))
}
