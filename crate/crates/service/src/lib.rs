//! HTTP endpoint for interactive feedback sessions.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/sessions` | `{"seed": u64}` (optional) | `{"id"}` |
//! | GET | `/sessions/{id}` | | status document |
//! | GET | `/sessions/{id}/generations/{k}/replays` | | replay JSONL |
//! | POST | `/sessions/{id}/generations/{k}/feedback` | `{"text"}` | phase record |
//! | POST | `/sessions/{id}/generations/{k}/skip` | | phase record |
//!
//! Every JSON document carries `schema_version`. Errors are
//! `{"schema_version", "error"}` with 404 for unknown sessions or
//! generations, 409 for answers outside the matching feedback phase and
//! 422 for bodies that do not parse.

mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fbmarl::config::RunConfig;
use serde::Deserialize;
use serde_json::{json, Value};

pub use session::{Answer, Refusal, Session, SessionState};

pub const API_VERSION: u32 = 1;

#[derive(Clone)]
pub struct AppState {
    config: Arc<RunConfig>,
    source: Option<Arc<str>>,
    sessions: Arc<RwLock<HashMap<String, Arc<Session>>>>,
    next: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(config: RunConfig, source: Option<String>) -> AppState {
        AppState {
            config: Arc::new(config),
            source: source.map(Arc::from),
            sessions: Arc::default(),
            next: Arc::new(AtomicU64::new(1)),
        }
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(start_session))
        .route("/sessions/{id}", get(status))
        .route("/sessions/{id}/generations/{k}/replays", get(replays))
        .route("/sessions/{id}/generations/{k}/feedback", post(feedback))
        .route("/sessions/{id}/generations/{k}/skip", post(skip))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn error(code: StatusCode, message: impl Into<String>) -> Response {
    (code, Json(json!({ "schema_version": API_VERSION, "error": message.into() }))).into_response()
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, Response> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| error(StatusCode::UNPROCESSABLE_ENTITY, format!("body: {e}")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartBody {
    seed: Option<u64>,
}

async fn start_session(State(app): State<AppState>, body: Bytes) -> Response {
    let b: StartBody = match parse_body(&body) {
        Ok(b) => b,
        Err(r) => return r,
    };
    let seed = b.seed.unwrap_or(app.config.seeds[0]);
    let id = format!("s{}", app.next.fetch_add(1, Ordering::Relaxed));
    let s = Session::start(id.clone(), Arc::clone(&app.config), app.source.clone(), seed);
    app.sessions.write().unwrap_or_else(|p| p.into_inner()).insert(id.clone(), s);
    log::info!("session {id} started with seed {seed}");
    Json(json!({ "schema_version": API_VERSION, "id": id, "seed": seed })).into_response()
}

fn status_document(s: &Session) -> Value {
    s.with(|sh| {
        json!({
            "schema_version": API_VERSION,
            "id": s.id,
            "seed": s.seed,
            "status": sh.state,
            "latest_metrics": sh.latest,
            "weights": sh.weights,
            "phases": sh.phases,
            "available_replays": sh.replays.keys().collect::<Vec<_>>(),
            "report": sh.report,
        })
    })
}

async fn status(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    match app.session(&id) {
        Some(s) => Json(status_document(&s)).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown session {id}")),
    }
}

fn lookup(app: &AppState, id: &str, k: &str) -> Result<(Arc<Session>, u32), Response> {
    let s = app.session(id).ok_or_else(|| error(StatusCode::NOT_FOUND, format!("unknown session {id}")))?;
    let k = k.parse().map_err(|_| error(StatusCode::NOT_FOUND, format!("no generation {k:?}")))?;
    Ok((s, k))
}

async fn replays(State(app): State<AppState>, Path((id, k)): Path<(String, String)>) -> Response {
    let (s, k) = match lookup(&app, &id, &k) {
        Ok(x) => x,
        Err(r) => return r,
    };
    match s.replay(k) {
        Some(doc) => ([(header::CONTENT_TYPE, "application/x-ndjson")], doc).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no replays for generation {k} yet")),
    }
}

#[derive(Debug, Default, Deserialize)]
struct FeedbackBody {
    text: Option<String>,
}

async fn feedback(State(app): State<AppState>, Path((id, k)): Path<(String, String)>, body: Bytes) -> Response {
    let b: FeedbackBody = match parse_body(&body) {
        Ok(b) => b,
        Err(r) => return r,
    };
    let Some(text) = b.text else {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "body must be {\"text\": string}");
    };
    answer(app, id, k, Answer::Submit, text).await
}

async fn skip(State(app): State<AppState>, Path((id, k)): Path<(String, String)>) -> Response {
    answer(app, id, k, Answer::Skip, String::new()).await
}

async fn answer(app: AppState, id: String, k: String, kind: Answer, text: String) -> Response {
    let (s, k) = match lookup(&app, &id, &k) {
        Ok(x) => x,
        Err(r) => return r,
    };
    let rx = match s.answer(k, kind, text) {
        Ok(rx) => rx,
        Err(Refusal::WrongState) => {
            return error(StatusCode::CONFLICT, format!("session {id} is not awaiting feedback"))
        }
        Err(Refusal::WrongGeneration) => {
            return error(StatusCode::CONFLICT, format!("session {id} is not awaiting feedback for generation {k}"))
        }
        Err(Refusal::Duplicate) => {
            return error(StatusCode::CONFLICT, format!("generation {k} of session {id} was already answered"))
        }
    };
    match rx.await {
        Ok(record) => Json(json!({
            "schema_version": API_VERSION,
            "id": id,
            "generation": k,
            "accepted": kind == Answer::Submit,
            "record": record,
        }))
        .into_response(),
        Err(_) => error(StatusCode::INTERNAL_SERVER_ERROR, "session ended before the phase completed"),
    }
}
