//! Uncertainty-gated interactive imitation learning.
//!
//! The crate is organised around the data-aggregation loop:
//!
//! - [`dataset`]: demonstration tuples, per-decision feedback records and the
//!   append-only demonstration dataset.
//! - [`sag`]: the gating threshold that tracks a desired sensitivity,
//!   specificity or minimum system success rate.
//! - [`fier`]: the query protocol that turns teacher feedback on the novice
//!   plan into validation, annotation and relabeled demonstrations, plus the
//!   per-episode loop.
//! - [`pier`]: replay priorities, sampling distribution and importance weights.
//! - [`novice`]: a small goal-conditioned classifier with Monte Carlo dropout
//!   uncertainty.
//! - [`simbench`]: a synthetic pick task, an oracle teacher and the experiment
//!   runner.
//! - [`config`]: the experiment configuration file format.

pub mod config;
pub mod dataset;
pub mod error;
pub mod fier;
pub mod novice;
pub mod pier;
pub mod rng;
pub mod sag;
pub mod simbench;

pub use config::ExperimentConfig;
pub use dataset::{
    Composition, DemoDataset, DemoKind, DemoTuple, FeedbackRecord, GoalId, Observation, Reward,
};
pub use error::{DataError, Error};
pub use fier::{
    fier_query, run_episode, Environment, FierOptions, GoalSet, Policy, Prediction,
    QueryPresentation, SceneView, Teacher, TeacherResponse, Verdict,
};
pub use novice::{NoviceConfig, NoviceModel, UncertaintyScore};
pub use pier::{PierConfig, PriorityTable};
pub use sag::{GatingConfig, GatingDecision, GatingMode, QueryReason};
