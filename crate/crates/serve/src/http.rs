use std::collections::BTreeMap;
use std::sync::Arc;

use askdagger_core::config::ExperimentConfig;
use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;
use tokio::sync::watch;

use crate::session::{Event, Feedback, FeedbackError, ServeOptions, Session, SessionStatus, SCHEMA_VERSION};

/// Sessions served by one process.
#[derive(Clone)]
pub struct AppState {
    config: Arc<ExperimentConfig>,
    options: ServeOptions,
    sessions: Arc<BTreeMap<String, Arc<Session>>>,
    shutdown: Arc<watch::Sender<bool>>,
}

impl AppState {
    pub fn new(config: ExperimentConfig, options: ServeOptions, sessions: Vec<Arc<Session>>) -> Self {
        Self {
            config: Arc::new(config),
            options,
            sessions: Arc::new(sessions.into_iter().map(|s| (s.id().to_string(), s)).collect()),
            shutdown: Arc::new(watch::channel(false).0),
        }
    }

    /// Closes open event streams so a graceful shutdown can complete.
    pub fn shutdown(&self) {
        self.shutdown.send_replace(true);
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Arc<Session>> {
        self.sessions.values()
    }

    fn session(&self, id: &str) -> Result<&Arc<Session>, ApiError> {
        self.sessions
            .get(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`")))
    }
}

#[derive(Debug, Serialize)]
struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    schema_version: u32,
    error: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: String) -> Self {
        Self {
            status,
            schema_version: SCHEMA_VERSION,
            error,
            message,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<FeedbackError> for ApiError {
    fn from(e: FeedbackError) -> Self {
        match e {
            FeedbackError::Stale { .. } => Self::new(StatusCode::CONFLICT, "stale_query", e.to_string()),
            FeedbackError::Invalid(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_feedback", e.to_string()),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/session/{id}/state", get(session_state))
        .route("/session/{id}/feedback", post(feedback))
        .route("/session/{id}/dataset", get(dataset))
        .route("/session/{id}/events", get(events))
        .with_state(state)
}

#[derive(Serialize)]
struct SessionEntry<'a> {
    id: &'a str,
    seed: u64,
    status: SessionStatus,
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let sessions: Vec<_> = state
        .sessions()
        .map(|s| SessionEntry {
            id: s.id(),
            seed: s.seed(),
            status: s.status(),
        })
        .collect();
    Json(json!({
        "status": "ok",
        "schema_version": SCHEMA_VERSION,
        "options": state.options,
        "config": *state.config,
        "sessions": sessions,
    }))
}

async fn session_state(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(state.session(&id)?.state()).into_response())
}

async fn feedback(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let fb: Feedback = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "malformed_feedback", e.to_string()))?;
    session.submit(&fb)?;
    Ok(Json(json!({"schema_version": SCHEMA_VERSION, "accepted": fb.query_id})).into_response())
}

async fn dataset(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let body = state.session(&id)?.dataset_jsonl();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let session = Arc::clone(state.session(&id)?);
    let shutdown = state.shutdown.subscribe();
    Ok(ws.on_upgrade(move |socket| stream_events(socket, session, q.since, shutdown)))
}

async fn send(socket: &mut WebSocket, event: &Event) -> bool {
    let text = serde_json::to_string(event).expect("events serialize");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn stream_events(mut socket: WebSocket, session: Arc<Session>, since: u64, mut shutdown: watch::Receiver<bool>) {
    if *shutdown.borrow() {
        return;
    }
    let (backlog, mut rx) = session.subscribe(since);
    let mut last = since;
    for e in &backlog {
        if !send(&mut socket, e).await {
            return;
        }
        last = e.seq;
    }
    loop {
        tokio::select! {
            _ = shutdown.changed() => {
                let _ = socket.send(Message::Close(None)).await;
                return;
            }
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
            ev = rx.recv() => match ev {
                Ok(e) => {
                    if e.seq <= last {
                        continue;
                    }
                    if !send(&mut socket, &e).await {
                        return;
                    }
                    last = e.seq;
                }
                Err(RecvError::Lagged(n)) => {
                    log::warn!("session {}: event stream lagged by {n}, resending from buffer", session.id());
                    for e in session.events_since(last) {
                        if !send(&mut socket, &e).await {
                            return;
                        }
                        last = e.seq;
                    }
                }
                Err(RecvError::Closed) => {
                    let _ = socket.send(Message::Close(None)).await;
                    return;
                }
            },
        }
    }
}
