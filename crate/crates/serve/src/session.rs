use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::{mpsc, Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use askdagger_core::config::ExperimentConfig;
use askdagger_core::dataset::{Composition, DemoDataset, DemoTuple, FeedbackRecord, GoalId};
use askdagger_core::error::Error;
use askdagger_core::fier::{CandidateView, GoalSet, ProtocolError, QueryPresentation, Teacher, TeacherResponse, Verdict};
use askdagger_core::sag::{threshold_json, QueryReason};
use askdagger_core::simbench::{run_experiment_with, MetricsSnapshot, OracleTeacher, RunObserver, RunResult, SceneTruth, StepRow};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

pub const SCHEMA_VERSION: u32 = 1;

/// What the engine does when no feedback arrives in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Wait for the client indefinitely.
    Block,
    /// Answer with the ground-truth oracle after the timeout.
    OracleAfterTimeout,
}

impl FromStr for Fallback {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "block" => Ok(Self::Block),
            "oracle_after_timeout" | "oracle-after-timeout" | "oracle" => Ok(Self::OracleAfterTimeout),
            _ => Err(format!("unknown fallback `{s}` (expected block or oracle_after_timeout)")),
        }
    }
}

impl fmt::Display for Fallback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Block => "block",
            Self::OracleAfterTimeout => "oracle_after_timeout",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServeOptions {
    pub fallback: Fallback,
    #[serde(with = "millis")]
    pub timeout: Duration,
    /// Episodes between `metrics_update` events; 0 disables them.
    pub metrics_every: u64,
    /// Events kept for reconnecting clients.
    pub buffer: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            fallback: Fallback::OracleAfterTimeout,
            timeout: Duration::from_secs(30),
            metrics_every: 10,
            buffer: 1000,
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    Finished,
    Failed,
}

/// A query waiting for the teacher, as sent to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub query_id: u64,
    pub episode: u64,
    pub step: u64,
    pub goal: GoalId,
    pub goal_name: String,
    pub command: String,
    pub candidates: Vec<CandidateView>,
    pub planned_action: usize,
    pub u: f64,
    /// `null` when the threshold is the no-active-query sentinel.
    #[serde(with = "threshold_json")]
    pub gamma: f64,
    pub reason: QueryReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    Client,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventBody {
    QueryPosted { query: PendingQuery },
    QueryAnswered { query_id: u64, source: AnswerSource, response: TeacherResponse },
    EpisodeDone { episode: u64, decisions: u64, queries: u64 },
    MetricsUpdate { episode: u64, metrics: MetricsSnapshot },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub schema_version: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub episodes: u64,
    pub decisions: u64,
    pub queries: u64,
    pub answered_by_client: u64,
    pub answered_by_oracle: u64,
    #[serde(with = "threshold_json")]
    pub gamma: f64,
    pub demonstrations: usize,
    pub composition: Composition,
    pub metrics: Option<MetricsSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub schema_version: u32,
    pub session_id: String,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub pending_query: Option<PendingQuery>,
    pub goals: Vec<String>,
    pub stats: SessionStats,
}

/// Feedback for a pending query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    pub query_id: u64,
    pub verdict: Verdict,
    #[serde(default)]
    pub relabel_goal: Option<GoalId>,
    #[serde(default)]
    pub annotation_action: Option<usize>,
}

impl Feedback {
    pub fn response(&self) -> TeacherResponse {
        TeacherResponse {
            verdict: self.verdict,
            relabel_goal: self.relabel_goal,
            annotation_action: self.annotation_action,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeedbackError {
    #[error("query {got} is not pending (pending: {pending:?})")]
    Stale { got: u64, pending: Option<u64> },
    #[error(transparent)]
    Invalid(#[from] ProtocolError),
}

struct Pending {
    query: PendingQuery,
    candidates: usize,
    reply: mpsc::Sender<TeacherResponse>,
}

struct Inner {
    status: SessionStatus,
    error: Option<String>,
    cancelled: bool,
    pending: Option<Pending>,
    next_query_id: u64,
    next_seq: u64,
    buffer: VecDeque<Event>,
    stats: SessionStats,
    dataset: DemoDataset,
}

/// One engine run whose teacher is reached through the service.
pub struct Session {
    id: String,
    config: ExperimentConfig,
    seed: u64,
    goals: GoalSet,
    options: ServeOptions,
    inner: Mutex<Inner>,
    events: broadcast::Sender<Event>,
}

impl Session {
    pub fn new(id: impl Into<String>, config: ExperimentConfig, seed: u64, options: ServeOptions) -> Arc<Self> {
        let (events, _) = broadcast::channel(options.buffer.clamp(16, 4096));
        let goals = config.task.goal_set();
        Arc::new(Self {
            id: id.into(),
            config,
            seed,
            goals,
            options,
            inner: Mutex::new(Inner {
                status: SessionStatus::Running,
                error: None,
                cancelled: false,
                pending: None,
                next_query_id: 1,
                next_seq: 1,
                buffer: VecDeque::new(),
                stats: SessionStats {
                    episodes: 0,
                    decisions: 0,
                    queries: 0,
                    answered_by_client: 0,
                    answered_by_oracle: 0,
                    gamma: 0.0,
                    demonstrations: 0,
                    composition: Composition::default(),
                    metrics: None,
                },
                dataset: DemoDataset::new(),
            }),
            events,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn publish(&self, inner: &mut Inner, body: EventBody) {
        let event = Event {
            schema_version: SCHEMA_VERSION,
            seq: inner.next_seq,
            body,
        };
        inner.next_seq += 1;
        if inner.buffer.len() >= self.options.buffer {
            inner.buffer.pop_front();
        }
        if self.options.buffer > 0 {
            inner.buffer.push_back(event.clone());
        }
        let _ = self.events.send(event);
    }

    /// Runs the experiment on a background thread.
    pub fn start(self: &Arc<Self>) -> JoinHandle<Result<RunResult, Error>> {
        let session = Arc::clone(self);
        std::thread::spawn(move || {
            let mut teacher = RemoteTeacher {
                oracle: OracleTeacher::new(session.config.teacher.relabel_probability, session.seed),
                session: Arc::clone(&session),
            };
            let mut observer = SessionObserver {
                session: Arc::clone(&session),
            };
            let result = run_experiment_with(&session.config, session.seed, &mut teacher, &mut observer);
            let mut inner = session.lock();
            inner.pending = None;
            match &result {
                Ok(_) => inner.status = SessionStatus::Finished,
                Err(e) => {
                    log::error!("session {} failed: {e}", session.id);
                    inner.status = SessionStatus::Failed;
                    inner.error = Some(e.to_string());
                }
            }
            result
        })
    }

    /// Stops the run at its next query.
    pub fn cancel(&self) {
        let mut inner = self.lock();
        inner.cancelled = true;
        inner.pending = None;
    }

    pub fn status(&self) -> SessionStatus {
        self.lock().status
    }

    pub fn state(&self) -> SessionState {
        let inner = self.lock();
        SessionState {
            schema_version: SCHEMA_VERSION,
            session_id: self.id.clone(),
            status: inner.status,
            error: inner.error.clone(),
            pending_query: inner.pending.as_ref().map(|p| p.query.clone()),
            goals: self.goals.iter().map(|(_, n)| n.to_string()).collect(),
            stats: inner.stats.clone(),
        }
    }

    /// Answers the pending query. The first valid answer for an id wins.
    pub fn submit(&self, feedback: &Feedback) -> Result<(), FeedbackError> {
        let mut inner = self.lock();
        let pending = inner.pending.as_ref().map(|p| p.query.query_id);
        if pending != Some(feedback.query_id) {
            return Err(FeedbackError::Stale {
                got: feedback.query_id,
                pending,
            });
        }
        let response = feedback.response();
        let candidates = inner.pending.as_ref().map_or(0, |p| p.candidates);
        response.check_strict(candidates, &self.goals)?;
        let Some(p) = inner.pending.take() else {
            unreachable!("pending checked above");
        };
        inner.stats.answered_by_client += 1;
        self.publish(
            &mut inner,
            EventBody::QueryAnswered {
                query_id: feedback.query_id,
                source: AnswerSource::Client,
                response,
            },
        );
        let _ = p.reply.send(response);
        Ok(())
    }

    pub fn dataset_jsonl(&self) -> Vec<u8> {
        let inner = self.lock();
        let mut out = Vec::new();
        inner
            .dataset
            .write_jsonl(&mut out)
            .expect("writing to memory cannot fail");
        out
    }

    /// Buffered events after `since`, and a receiver for everything later.
    pub fn subscribe(&self, since: u64) -> (Vec<Event>, broadcast::Receiver<Event>) {
        let inner = self.lock();
        let backlog = inner.buffer.iter().filter(|e| e.seq > since).cloned().collect();
        (backlog, self.events.subscribe())
    }

    pub fn events_since(&self, since: u64) -> Vec<Event> {
        self.lock().buffer.iter().filter(|e| e.seq > since).cloned().collect()
    }

    fn post(&self, query: &QueryPresentation) -> Result<(u64, mpsc::Receiver<TeacherResponse>), ProtocolError> {
        let mut inner = self.lock();
        if inner.cancelled {
            return Err(ProtocolError::TeacherUnavailable("session cancelled".into()));
        }
        let (tx, rx) = mpsc::channel();
        let query_id = inner.next_query_id;
        inner.next_query_id += 1;
        let view = PendingQuery {
            query_id,
            episode: query.episode,
            step: query.step,
            goal: query.goal,
            goal_name: self.goals.name(query.goal).unwrap_or_default().to_string(),
            command: query.scene.command.clone(),
            candidates: query.scene.candidates.clone(),
            planned_action: query.planned_action,
            u: query.u,
            gamma: query.gamma,
            reason: query.reason,
        };
        inner.pending = Some(Pending {
            query: view.clone(),
            candidates: query.observation.candidates,
            reply: tx,
        });
        self.publish(&mut inner, EventBody::QueryPosted { query: view });
        Ok((query_id, rx))
    }

    /// Claims the query for the oracle unless a client answered first.
    fn claim(&self, query_id: u64) -> bool {
        let mut inner = self.lock();
        if inner.pending.as_ref().map(|p| p.query.query_id) == Some(query_id) {
            inner.pending = None;
            true
        } else {
            false
        }
    }

    fn oracle_answered(&self, query_id: u64, response: TeacherResponse) {
        let mut inner = self.lock();
        inner.stats.answered_by_oracle += 1;
        self.publish(
            &mut inner,
            EventBody::QueryAnswered {
                query_id,
                source: AnswerSource::Oracle,
                response,
            },
        );
    }
}

struct RemoteTeacher {
    session: Arc<Session>,
    oracle: OracleTeacher,
}

impl Teacher<SceneTruth> for RemoteTeacher {
    fn respond(&mut self, query: &QueryPresentation, truth: &SceneTruth) -> Result<TeacherResponse, ProtocolError> {
        let (query_id, rx) = self.session.post(query)?;
        let unavailable = || ProtocolError::TeacherUnavailable("session cancelled".into());
        match self.session.options.fallback {
            Fallback::Block => rx.recv().map_err(|_| unavailable()),
            Fallback::OracleAfterTimeout => match rx.recv_timeout(self.session.options.timeout) {
                Ok(r) => Ok(r),
                Err(mpsc::RecvTimeoutError::Disconnected) => Err(unavailable()),
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    if self.session.claim(query_id) {
                        let response = self.oracle.answer(query, truth);
                        self.session.oracle_answered(query_id, response);
                        Ok(response)
                    } else {
                        rx.recv().map_err(|_| unavailable())
                    }
                }
            },
        }
    }
}

struct SessionObserver {
    session: Arc<Session>,
}

impl RunObserver for SessionObserver {
    fn on_step(&mut self, row: &StepRow) {
        let mut inner = self.session.lock();
        inner.stats.decisions += 1;
        inner.stats.queries += u64::from(row.queried);
        inner.stats.gamma = row.gamma;
    }

    fn on_collect(&mut self, tuples: &[DemoTuple], records: &[FeedbackRecord]) {
        let mut inner = self.session.lock();
        if let Err(e) = inner.dataset.append_trajectory(tuples.to_vec(), records.to_vec()) {
            log::warn!("session {}: dataset mirror rejected tuples: {e}", self.session.id);
        }
        inner.stats.demonstrations = inner.dataset.len();
        inner.stats.composition = inner.dataset.composition_counts();
    }

    fn on_episode(&mut self, episode: u64, metrics: &MetricsSnapshot) {
        let session = &self.session;
        let mut inner = session.lock();
        inner.stats.episodes = episode + 1;
        inner.stats.metrics = Some(*metrics);
        let body = EventBody::EpisodeDone {
            episode,
            decisions: inner.stats.decisions,
            queries: inner.stats.queries,
        };
        session.publish(&mut inner, body);
        let every = session.options.metrics_every;
        if every > 0 && (episode + 1).is_multiple_of(every) {
            session.publish(
                &mut inner,
                EventBody::MetricsUpdate {
                    episode,
                    metrics: *metrics,
                },
            );
        }
    }
}
