//! Uncertainty gating with a threshold that tracks a desired sensitivity,
//! specificity or minimum system success rate.
//!
//! Each decision the threshold is re-estimated from the recent feedback
//! history: take a window holding enough relevant labels, remove the drift
//! of uncertainty over training, impute labels for unqueried decisions from
//! a logistic model, search the threshold for each imputation and take the
//! median.

mod regression;
mod threshold;
mod window;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeedbackRecord;
use crate::rng::{self, RunRng, Stream};

pub use regression::{fit_logistic, linear_fit, sigmoid, LogisticFit};
pub use threshold::{expected_metric, gate_target, set_threshold, threshold_json, ThresholdSweep, NEVER};
pub use window::{get_window, normalize_uncertainties, Label, LabeledWindow};

/// The quantity the threshold is tuned to track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatingMode {
    /// Fraction of novice failures that are queried.
    Sensitivity,
    /// Fraction of novice successes that are not queried.
    Specificity,
    /// System success, counting queried decisions as successes.
    Success,
}

impl GatingMode {
    pub fn name(self) -> &'static str {
        match self {
            GatingMode::Sensitivity => "sensitivity",
            GatingMode::Specificity => "specificity",
            GatingMode::Success => "success",
        }
    }
}

impl fmt::Display for GatingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GatingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sensitivity" | "sens" => Ok(GatingMode::Sensitivity),
            "specificity" | "spec" => Ok(GatingMode::Specificity),
            "success" => Ok(GatingMode::Success),
            other => Err(format!(
                "unknown gating mode `{other}` (expected sensitivity, specificity or success)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingConfig {
    pub mode: GatingMode,
    pub sigma_des: f64,
    pub p_rand: f64,
    pub n_min: usize,
    pub n_rep: usize,
    /// Remove the linear trend of uncertainty over update counts.
    pub normalize: bool,
    /// Impute labels of unqueried decisions; when off they are dropped.
    pub impute: bool,
}

impl Default for GatingConfig {
    fn default() -> Self {
        Self {
            mode: GatingMode::Sensitivity,
            sigma_des: 0.9,
            p_rand: 0.1,
            n_min: 15,
            n_rep: 25,
            normalize: true,
            impute: true,
        }
    }
}

impl GatingConfig {
    /// Settings that are legal but cannot be tracked as asked.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.mode == GatingMode::Sensitivity && self.sigma_des <= self.p_rand {
            out.push(format!(
                "sigma_des = {} is not above p_rand = {}; random queries alone keep the expected sensitivity at or above p_rand",
                self.sigma_des, self.p_rand
            ));
        }
        if self.mode == GatingMode::Specificity && self.sigma_des > 1.0 - self.p_rand {
            out.push(format!(
                "sigma_des = {} exceeds 1 - p_rand = {}; random queries cap the expected specificity",
                self.sigma_des,
                1.0 - self.p_rand
            ));
        }
        out
    }
}

/// Why a decision went to the teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryReason {
    Active,
    Random,
    None,
}

impl QueryReason {
    pub fn name(self) -> &'static str {
        match self {
            QueryReason::Active => "active",
            QueryReason::Random => "random",
            QueryReason::None => "none",
        }
    }
}

impl fmt::Display for QueryReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatingDecision {
    /// `+inf` when no active query can fire.
    pub gamma: f64,
    pub queried: bool,
    pub reason: QueryReason,
}

/// Draws labels for the unknown entries of `labels` from `fit`; known labels
/// pass through. `true` marks a failure.
pub fn impute_labels<R: Rng + ?Sized>(
    u: &[f64],
    labels: &[Label],
    fit: &LogisticFit,
    rng: &mut R,
) -> Vec<bool> {
    u.iter()
        .zip(labels)
        .map(|(&ui, &l)| match l.known() {
            Some(f) => f,
            None => rng.random::<f64>() < fit.prob(ui),
        })
        .collect()
}

/// Median with infinities ordered last; `0.0` for an empty slice.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        let (a, b) = (values[n / 2 - 1], values[n / 2]);
        if b.is_infinite() {
            b
        } else {
            0.5 * (a + b)
        }
    }
}

/// The gating threshold for the next decision given the feedback history.
pub fn sag_threshold<R: Rng + ?Sized>(
    records: &[FeedbackRecord],
    config: &GatingConfig,
    current_k: u64,
    rng: &mut R,
) -> f64 {
    let mut window = get_window(records, config.n_min.max(1), config.mode);
    if config.normalize {
        window = normalize_uncertainties(window, current_k);
    }

    if !config.impute {
        let (u, f): (Vec<f64>, Vec<bool>) = window
            .u
            .iter()
            .zip(&window.labels)
            .filter_map(|(&u, l)| l.known().map(|f| (u, f)))
            .unzip();
        return set_threshold(&u, &f, config.sigma_des, config.p_rand, config.mode);
    }

    let (known_u, known_f): (Vec<f64>, Vec<bool>) = window
        .u
        .iter()
        .zip(&window.labels)
        .filter_map(|(&u, l)| l.known().map(|f| (u, f)))
        .unzip();
    let fit = fit_logistic(&known_u, &known_f);
    let sweep = ThresholdSweep::new(&window.u);
    let target = gate_target(config.mode, config.sigma_des, config.p_rand);
    let mut gammas: Vec<f64> = (0..config.n_rep.max(1))
        .map(|_| {
            let f = impute_labels(&window.u, &window.labels, &fit, rng);
            sweep.threshold(&f, target, config.mode)
        })
        .collect();
    median(&mut gammas)
}

/// Queries when `u >= gamma` or a uniform draw falls below `p_rand`. The draw
/// is taken on every call so the random stream does not depend on `u`.
pub fn decide<R: Rng + ?Sized>(u: f64, gamma: f64, p_rand: f64, rng: &mut R) -> GatingDecision {
    let eps: f64 = rng.random();
    let reason = if u >= gamma {
        QueryReason::Active
    } else if eps < p_rand {
        QueryReason::Random
    } else {
        QueryReason::None
    };
    GatingDecision {
        gamma,
        queried: reason != QueryReason::None,
        reason,
    }
}

/// Gating state carried across decisions: the configuration and the two
/// random streams it consumes.
#[derive(Debug, Clone)]
pub struct Gate {
    pub config: GatingConfig,
    fixed_gamma: Option<f64>,
    gating_rng: RunRng,
    imputation_rng: RunRng,
}

impl Gate {
    pub fn new(config: GatingConfig, seed: u64) -> Self {
        Self {
            config,
            fixed_gamma: None,
            gating_rng: rng::stream(seed, Stream::Gating),
            imputation_rng: rng::stream(seed, Stream::Imputation),
        }
    }

    /// A gate with a constant threshold, e.g. `0.0` (always query) or
    /// [`NEVER`].
    pub fn fixed(gamma: f64, p_rand: f64, seed: u64) -> Self {
        let config = GatingConfig {
            p_rand,
            ..GatingConfig::default()
        };
        Self {
            fixed_gamma: Some(gamma),
            ..Self::new(config, seed)
        }
    }

    pub fn threshold(&mut self, history: &[FeedbackRecord], current_k: u64) -> f64 {
        match self.fixed_gamma {
            Some(g) => g,
            None => sag_threshold(history, &self.config, current_k, &mut self.imputation_rng),
        }
    }

    pub fn decide(&mut self, u: f64, gamma: f64) -> GatingDecision {
        decide(u, gamma, self.config.p_rand, &mut self.gating_rng)
    }
}
