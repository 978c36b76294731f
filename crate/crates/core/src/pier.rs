//! Prioritized replay over the demonstration dataset.
//!
//! A tuple's priority grows with the novice's uncertainty and the tuple's
//! age when the novice failed on it, and shrinks with them when the novice
//! succeeded. Neutral tuples (unqueried, relabeled, seed) sit at 1 between
//! the two groups.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DemoDataset, Reward};
use crate::error::DataError;

/// Priority assigned to tuples whose priority evaluates to zero, so every
/// tuple keeps a positive sampling probability.
pub const PRIORITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PierConfig {
    /// Prioritization strength; 0 gives uniform sampling.
    pub alpha: f64,
    /// Importance-weight exponent; 0 disables bias compensation.
    pub beta: f64,
    /// Blend between uncertainty (1) and age (0).
    pub lambda: f64,
    /// Base of the priority curve, `> 1`.
    pub base: f64,
}

impl Default for PierConfig {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            beta: 0.0,
            lambda: 0.5,
            base: 10.0,
        }
    }
}

impl PierConfig {
    /// Uniform sampling with unit weights.
    pub fn uniform() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            ..Self::default()
        }
    }
}

/// Blend of uncertainty and relative age in `[0, 1]`. With `current_k = 0`
/// every tuple is current and the age term is zero.
pub fn priority_exponent(u: f64, k: u64, current_k: u64, lambda: f64) -> f64 {
    let age = if current_k == 0 {
        0.0
    } else {
        current_k.saturating_sub(k) as f64 / current_k as f64
    };
    (lambda * u + (1.0 - lambda) * age).clamp(0.0, 1.0)
}

/// Priority in `[0, 2]`: failures in `[1, 2]`, neutral exactly 1, successes
/// in `[0, 1]`.
pub fn priority(r: Reward, c: f64, base: f64) -> f64 {
    1.0 - r.as_f64() * (base.powf(1.0 - c) - 1.0) / (base - 1.0)
}

/// Priorities, sampling distribution and importance weights of a dataset.
#[derive(Debug, Clone)]
pub struct PriorityTable {
    priorities: Vec<f64>,
    probs: Vec<f64>,
    weights: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl PriorityTable {
    /// Table from raw priorities.
    pub fn from_priorities(priorities: Vec<f64>, alpha: f64, beta: f64) -> Result<Self, DataError> {
        if priorities.is_empty() {
            return Err(DataError::Empty);
        }
        let scaled: Vec<f64> = priorities
            .iter()
            .map(|&p| p.max(PRIORITY_FLOOR).powf(alpha))
            .collect();
        let total: f64 = scaled.iter().sum();
        let probs: Vec<f64> = scaled.iter().map(|s| s / total).collect();
        let n = probs.len() as f64;
        let raw: Vec<f64> = probs.iter().map(|&p| (n * p).powf(-beta)).collect();
        let max = raw.iter().copied().fold(f64::MIN, f64::max);
        let weights = raw.iter().map(|w| w / max).collect();
        let sampler = WeightedIndex::new(&probs).map_err(|_| DataError::Empty)?;
        Ok(Self {
            priorities,
            probs,
            weights,
            sampler,
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn priorities(&self) -> &[f64] {
        &self.priorities
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `batch_size` independent draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<usize> {
        (0..batch_size).map(|_| self.sampler.sample(rng)).collect()
    }
}

/// Builds the replay table for `dataset` at update count `current_k`.
pub fn build_table(
    dataset: &DemoDataset,
    current_k: u64,
    config: &PierConfig,
) -> Result<PriorityTable, DataError> {
    let priorities = dataset
        .records()
        .iter()
        .map(|rec| {
            let c = priority_exponent(rec.u, rec.k, current_k, config.lambda);
            priority(rec.r, c, config.base)
        })
        .collect();
    PriorityTable::from_priorities(priorities, config.alpha, config.beta)
}
