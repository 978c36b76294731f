//! Threshold search over the empirical gating metric.
//!
//! Queries are positives (`u >= gamma`) and novice failures are the positive
//! class. The candidate thresholds are the sorted unique window
//! uncertainties followed by a `+inf` sentinel that issues no active query.

use super::GatingMode;

/// Threshold returned when no active query should fire.
pub const NEVER: f64 = f64::INFINITY;

/// Serde adapter for thresholds in JSON, which has no infinity: [`NEVER`]
/// is written as `null` and `null` reads back as [`NEVER`].
pub mod threshold_json {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::NEVER;

    pub fn serialize<S: Serializer>(gamma: &f64, s: S) -> Result<S::Ok, S::Error> {
        if gamma.is_finite() {
            s.serialize_f64(*gamma)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(NEVER))
    }
}

/// The metric value the active gate alone must reach so that, with random
/// queries at rate `p_rand` on top, the expected metric equals `sigma_des`.
pub fn gate_target(mode: GatingMode, sigma_des: f64, p_rand: f64) -> f64 {
    match mode {
        GatingMode::Sensitivity | GatingMode::Success => (sigma_des - p_rand) / (1.0 - p_rand),
        GatingMode::Specificity => sigma_des / (1.0 - p_rand),
    }
}

/// Expected metric including random queries, given the active-gate metric.
pub fn expected_metric(mode: GatingMode, gate_metric: f64, p_rand: f64) -> f64 {
    match mode {
        GatingMode::Sensitivity | GatingMode::Success => gate_metric + p_rand * (1.0 - gate_metric),
        GatingMode::Specificity => gate_metric * (1.0 - p_rand),
    }
}

/// Uncertainties sorted once and reused across imputation repetitions.
#[derive(Debug, Clone)]
pub struct ThresholdSweep {
    order: Vec<usize>,
    // Unique sorted values and, for each, the end of its run in `order`.
    values: Vec<f64>,
    run_end: Vec<usize>,
}

impl ThresholdSweep {
    pub fn new(u: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..u.len()).collect();
        order.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
        let mut values = Vec::new();
        let mut run_end = Vec::new();
        for (pos, &i) in order.iter().enumerate() {
            if values.last() != Some(&u[i]) {
                if !values.is_empty() {
                    run_end.push(pos);
                }
                values.push(u[i]);
            }
        }
        if !values.is_empty() {
            run_end.push(order.len());
        }
        Self {
            order,
            values,
            run_end,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Metric value at every candidate, the sentinel last.
    ///
    /// `None` when the metric is undefined (no failures for sensitivity, no
    /// successes for specificity).
    pub fn metric_curve(&self, failures: &[bool], mode: GatingMode) -> Option<Vec<f64>> {
        debug_assert_eq!(failures.len(), self.order.len());
        let m = self.values.len();
        // Failures and successes strictly below each candidate.
        let mut fail_below = Vec::with_capacity(m + 1);
        let mut succ_below = Vec::with_capacity(m + 1);
        let (mut f, mut s) = (0usize, 0usize);
        let mut pos = 0;
        for &end in &self.run_end {
            fail_below.push(f);
            succ_below.push(s);
            for &i in &self.order[pos..end] {
                if failures[i] {
                    f += 1;
                } else {
                    s += 1;
                }
            }
            pos = end;
        }
        // Sentinel: everything is below.
        fail_below.push(f);
        succ_below.push(s);
        let (total_f, total_s) = (f as f64, s as f64);
        let n = total_f + total_s;
        let curve = match mode {
            GatingMode::Sensitivity => {
                if f == 0 {
                    return None;
                }
                fail_below.iter().map(|&fb| (total_f - fb as f64) / total_f).collect()
            }
            GatingMode::Specificity => {
                if s == 0 {
                    return None;
                }
                succ_below.iter().map(|&sb| sb as f64 / total_s).collect()
            }
            GatingMode::Success => fail_below.iter().map(|&fb| 1.0 - fb as f64 / n).collect(),
        };
        Some(curve)
    }

    fn candidate(&self, j: usize) -> f64 {
        self.values.get(j).copied().unwrap_or(NEVER)
    }

    /// Threshold whose metric best brackets `target`.
    pub fn threshold(&self, failures: &[bool], target: f64, mode: GatingMode) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let Some(curve) = self.metric_curve(failures, mode) else {
            return match mode {
                GatingMode::Specificity => self.values[0],
                _ => NEVER,
            };
        };
        // Random queries alone meet the target.
        if target <= 0.0 && mode != GatingMode::Specificity {
            return NEVER;
        }
        let last = curve.len() - 1;
        // Lowest bracket first: ties resolve toward more queries.
        for j in 0..last {
            let (a, b) = (curve[j], curve[j + 1]);
            if target < a.min(b) || target > a.max(b) {
                continue;
            }
            if a == b || target == a {
                return self.candidate(j);
            }
            let w = (target - a) / (b - a);
            if j + 1 == last {
                if w >= 1.0 {
                    return NEVER;
                }
                // Interpolate toward the top of the unit interval.
                let lo = self.values[j];
                return lo + w * (lo.max(1.0) - lo);
            }
            let (lo, hi) = (self.values[j], self.values[j + 1]);
            return lo + w * (hi - lo);
        }
        // Unreachable target: pick the extreme on the side it lies.
        let decreasing = curve[0] >= curve[last];
        let above_start = if decreasing {
            target > curve[0]
        } else {
            target < curve[0]
        };
        if above_start {
            self.values[0]
        } else {
            NEVER
        }
    }
}

/// Threshold on `u` meeting `sigma_des` in expectation under random queries
/// at rate `p_rand`; `failures[i]` is the (possibly imputed) label of `u[i]`.
pub fn set_threshold(
    u: &[f64],
    failures: &[bool],
    sigma_des: f64,
    p_rand: f64,
    mode: GatingMode,
) -> f64 {
    ThresholdSweep::new(u).threshold(failures, gate_target(mode, sigma_des, p_rand), mode)
}
