//! The query protocol and the per-episode collection loop.
//!
//! When the gate fires, the novice's plan is shown to the teacher. A
//! validated plan is executed and stored as a validation demonstration. A
//! rejected plan is replaced by the teacher's annotation; if the teacher also
//! names the goal the plan would have achieved, the plan is stored under that
//! goal as a relabeled demonstration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DemoKind, DemoTuple, FeedbackRecord, GoalId, Observation, Reward};
use crate::error::DataError;
use crate::sag::{Gate, GatingDecision, QueryReason};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("a validation must not carry an annotation action")]
    ValidateWithAnnotation,
    #[error("a validation must not carry a relabel goal")]
    ValidateWithRelabel,
    #[error("a rejection requires an annotation action")]
    MissingAnnotation,
    #[error("annotation action {action} is out of range for {candidates} candidates")]
    AnnotationOutOfRange { action: usize, candidates: usize },
    #[error("relabel goal {0} is not in the goal set")]
    UnknownGoal(GoalId),
    #[error("teacher unavailable: {0}")]
    TeacherUnavailable(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action {action} is out of range for {candidates} candidates")]
    InvalidAction { action: usize, candidates: usize },
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("environment failure: {0}")]
    Failure(String),
}

/// The finite goal set with display names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSet {
    names: Vec<String>,
}

impl GoalSet {
    pub fn new(names: Vec<String>) -> Self {
        Self { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, goal: GoalId) -> bool {
        goal.0 < self.names.len()
    }

    pub fn name(&self, goal: GoalId) -> Option<&str> {
        self.names.get(goal.0).map(String::as_str)
    }

    pub fn lookup(&self, name: &str) -> Option<GoalId> {
        self.names.iter().position(|n| n == name).map(GoalId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (GoalId, &str)> {
        self.names.iter().enumerate().map(|(i, n)| (GoalId(i), n.as_str()))
    }
}

/// Human-readable rendering of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub index: usize,
    /// Best guess of the candidate's attribute from its features.
    pub label: String,
}

/// Human-readable rendering of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneView {
    pub command: String,
    pub candidates: Vec<CandidateView>,
}

/// What the teacher sees when queried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPresentation {
    pub observation: Observation,
    pub goal: GoalId,
    pub planned_action: usize,
    pub u: f64,
    pub gamma: f64,
    pub reason: QueryReason,
    pub episode: u64,
    pub step: u64,
    pub scene: SceneView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Validate,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherResponse {
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relabel_goal: Option<GoalId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_action: Option<usize>,
}

impl TeacherResponse {
    pub fn validate() -> Self {
        Self {
            verdict: Verdict::Validate,
            relabel_goal: None,
            annotation_action: None,
        }
    }

    pub fn reject(annotation_action: usize, relabel_goal: Option<GoalId>) -> Self {
        Self {
            verdict: Verdict::Reject,
            relabel_goal,
            annotation_action: Some(annotation_action),
        }
    }

    /// Checks the shape rules against a scene with `candidates` candidates.
    pub fn check(&self, candidates: usize) -> Result<(), ProtocolError> {
        match self.verdict {
            Verdict::Validate => {
                if self.annotation_action.is_some() {
                    return Err(ProtocolError::ValidateWithAnnotation);
                }
                if self.relabel_goal.is_some() {
                    return Err(ProtocolError::ValidateWithRelabel);
                }
            }
            Verdict::Reject => {
                let action = self.annotation_action.ok_or(ProtocolError::MissingAnnotation)?;
                if action >= candidates {
                    return Err(ProtocolError::AnnotationOutOfRange { action, candidates });
                }
            }
        }
        Ok(())
    }

    /// [`check`](Self::check) plus goal-set membership of the relabel goal.
    pub fn check_strict(&self, candidates: usize, goals: &GoalSet) -> Result<(), ProtocolError> {
        self.check(candidates)?;
        match self.relabel_goal {
            Some(g) if !goals.contains(g) => Err(ProtocolError::UnknownGoal(g)),
            _ => Ok(()),
        }
    }
}

/// Answers queries. `truth` is the environment's ground truth for the
/// current scene; a human teacher ignores it.
pub trait Teacher<T: ?Sized> {
    fn respond(&mut self, query: &QueryPresentation, truth: &T) -> Result<TeacherResponse, ProtocolError>;

    /// Called once per finished episode.
    fn episode_done(&mut self, _episode: u64) {}
}

/// Outcome of executing an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub success: bool,
    pub done: bool,
}

pub trait Environment {
    type Truth: ?Sized;

    /// Starts an episode and returns the first observation and commanded goal.
    fn reset(&mut self) -> Result<(Observation, GoalId), EnvError>;

    /// Current observation and goal.
    fn current(&self) -> (&Observation, GoalId);

    fn truth(&self) -> &Self::Truth;

    /// Whether `action` achieves the current goal.
    fn is_correct(&self, action: usize) -> bool;

    fn goals(&self) -> &GoalSet;

    fn scene_view(&self) -> SceneView;

    /// Executes `action`; when not done the environment advances to the next
    /// scene, available through [`current`](Self::current).
    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub action: usize,
    pub u: f64,
}

pub trait Policy {
    fn predict(&mut self, observation: &Observation, goal: GoalId) -> Prediction;

    /// Number of completed model updates.
    fn update_count(&self) -> u64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FierOptions {
    /// Keep validated plans as validation demonstrations. When off, validated
    /// plans are stored as annotations (the teacher would have given the same
    /// action), which gives the annotation-only baseline.
    pub validate: bool,
    /// Keep relabeled demonstrations offered by the teacher.
    pub relabel: bool,
}

impl Default for FierOptions {
    fn default() -> Self {
        Self {
            validate: true,
            relabel: true,
        }
    }
}

/// Result of one query round-trip.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub executed_action: usize,
    pub tuples: Vec<DemoTuple>,
    /// Decision reward: `+1` validated, `-1` rejected.
    pub reward: Reward,
    pub response: TeacherResponse,
}

/// Shows the plan to the teacher and converts the answer into demonstrations.
pub fn fier_query<T: ?Sized, Tc: Teacher<T> + ?Sized>(
    presentation: &QueryPresentation,
    teacher: &mut Tc,
    truth: &T,
    goals: &GoalSet,
    options: &FierOptions,
) -> Result<QueryOutcome, ProtocolError> {
    let response = teacher.respond(presentation, truth)?;
    response.check(presentation.observation.candidates)?;
    let obs = &presentation.observation;
    let plan = presentation.planned_action;
    let goal = presentation.goal;
    let outcome = match response.verdict {
        Verdict::Validate => {
            let kind = if options.validate {
                DemoKind::Validation
            } else {
                DemoKind::Annotation
            };
            QueryOutcome {
                executed_action: plan,
                tuples: vec![DemoTuple::new(obs.clone(), plan, goal, kind)?],
                reward: Reward::Success,
                response,
            }
        }
        Verdict::Reject => {
            let action = response
                .annotation_action
                .ok_or(ProtocolError::MissingAnnotation)?;
            let mut tuples = vec![DemoTuple::new(obs.clone(), action, goal, DemoKind::Annotation)?];
            if let Some(g) = response.relabel_goal {
                if options.relabel && goals.contains(g) {
                    tuples.push(DemoTuple::new(obs.clone(), plan, g, DemoKind::Relabeled)?);
                }
            }
            QueryOutcome {
                executed_action: action,
                tuples,
                reward: Reward::Failure,
                response,
            }
        }
    };
    Ok(outcome)
}

/// Per-decision log line.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub episode: u64,
    pub step: u64,
    pub k: u64,
    pub u: f64,
    pub decision: GatingDecision,
    pub reward: Reward,
    /// Kind of the first tuple produced, if any.
    pub kind: Option<DemoKind>,
    pub relabeled: bool,
    pub novice_correct: bool,
    pub system_success: bool,
    pub goal: GoalId,
    pub planned_action: usize,
    pub executed_action: usize,
}

/// Everything one episode produced.
#[derive(Debug, Clone, Default)]
pub struct Episode {
    pub tuples: Vec<DemoTuple>,
    /// Records aligned with `tuples`, ready for the dataset.
    pub tuple_records: Vec<FeedbackRecord>,
    /// One record per decision, including unqueried ones.
    pub records: Vec<FeedbackRecord>,
    pub steps: Vec<StepLog>,
    /// Set when the environment failed mid-episode.
    pub aborted: Option<EnvError>,
}

/// Runs one episode: the novice plans, the gate decides, queried plans go
/// through [`fier_query`] and everything else executes autonomously.
///
/// Each decision's record is appended to `history` before the next decision
/// so multi-step episodes gate on their own earlier steps.
pub fn run_episode<E, P, T>(
    env: &mut E,
    policy: &mut P,
    teacher: &mut T,
    gate: &mut Gate,
    options: &FierOptions,
    history: &mut Vec<FeedbackRecord>,
    episode: u64,
) -> Result<Episode, ProtocolError>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
    T: Teacher<E::Truth> + ?Sized,
{
    let mut out = Episode::default();
    if let Err(e) = env.reset() {
        out.aborted = Some(e);
        return Ok(out);
    }
    let mut step = 0u64;
    loop {
        let (obs, goal) = env.current();
        let obs = obs.clone();
        let k = policy.update_count();
        let pred = policy.predict(&obs, goal);
        let gamma = gate.threshold(history, k);
        let decision = gate.decide(pred.u, gamma);
        let novice_correct = env.is_correct(pred.action);

        let (executed, reward, kind, relabeled) = if decision.queried {
            let presentation = QueryPresentation {
                observation: obs,
                goal,
                planned_action: pred.action,
                u: pred.u,
                gamma,
                reason: decision.reason,
                episode,
                step,
                scene: env.scene_view(),
            };
            let q = fier_query(&presentation, teacher, env.truth(), env.goals(), options)?;
            let first = q.tuples.first().map(|t| t.kind);
            let relabeled = q.tuples.iter().any(|t| t.kind == DemoKind::Relabeled);
            for t in q.tuples {
                out.tuple_records.push(FeedbackRecord {
                    u: pred.u,
                    r: t.reward,
                    k,
                    queried: true,
                    episode,
                    step,
                });
                out.tuples.push(t);
            }
            (q.executed_action, q.reward, first, relabeled)
        } else {
            (pred.action, Reward::Neutral, None, false)
        };

        let record = FeedbackRecord {
            u: pred.u,
            r: reward,
            k,
            queried: decision.queried,
            episode,
            step,
        };
        history.push(record);
        out.records.push(record);
        out.steps.push(StepLog {
            episode,
            step,
            k,
            u: pred.u,
            decision,
            reward,
            kind,
            relabeled,
            novice_correct,
            system_success: decision.queried || novice_correct,
            goal,
            planned_action: pred.action,
            executed_action: executed,
        });

        match env.step(executed) {
            Ok(o) if o.done => break,
            Ok(_) => step += 1,
            Err(e) => {
                out.aborted = Some(e);
                break;
            }
        }
    }
    teacher.episode_done(episode);
    Ok(out)
}
