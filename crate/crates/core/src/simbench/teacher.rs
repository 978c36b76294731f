use rand::Rng;

use crate::fier::{ProtocolError, QueryPresentation, Teacher, TeacherResponse};
use crate::rng::{self, RunRng, Stream};

use super::task::SceneTruth;

/// Teacher that answers from the scene's ground truth.
///
/// Validates a plan that picks the goal object; otherwise annotates the goal
/// object and, with probability `relabel_probability`, relabels the plan to
/// the attribute of the object it picked when that attribute is a goal.
#[derive(Debug, Clone)]
pub struct OracleTeacher {
    pub relabel_probability: f64,
    rng: RunRng,
}

impl OracleTeacher {
    pub fn new(relabel_probability: f64, seed: u64) -> Self {
        Self {
            relabel_probability,
            rng: rng::stream(seed, Stream::Teacher),
        }
    }

    pub fn answer(&mut self, query: &QueryPresentation, truth: &SceneTruth) -> TeacherResponse {
        let plan = query.planned_action;
        let picked = truth.attrs.get(plan).copied().flatten();
        if picked == Some(query.goal) {
            return TeacherResponse::validate();
        }
        let relabel = picked.filter(|_| {
            self.relabel_probability >= 1.0 || self.rng.random::<f64>() < self.relabel_probability
        });
        TeacherResponse::reject(truth.goal_pos, relabel)
    }
}

impl Teacher<SceneTruth> for OracleTeacher {
    fn respond(&mut self, query: &QueryPresentation, truth: &SceneTruth) -> Result<TeacherResponse, ProtocolError> {
        Ok(self.answer(query, truth))
    }
}
