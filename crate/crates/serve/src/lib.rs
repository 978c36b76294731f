//! HTTP and WebSocket service that lets a remote teacher answer an engine
//! run's queries.
//!
//! - `GET /health`: service status and the configuration echo.
//! - `GET /session/{id}/state`: status, pending query and running stats.
//! - `POST /session/{id}/feedback`: answer the pending query.
//! - `GET /session/{id}/dataset`: the demonstration dataset as JSON lines.
//! - `GET /session/{id}/events` (WebSocket): buffered then live events,
//!   optionally after `?since=<seq>`.

mod http;
mod session;

pub use http::{router, AppState};
pub use session::{
    AnswerSource, Event, EventBody, Fallback, Feedback, FeedbackError, PendingQuery, ServeOptions,
    Session, SessionState, SessionStats, SessionStatus, SCHEMA_VERSION,
};
