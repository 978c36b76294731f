use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricWindows {
    /// Recent novice failures used for sensitivity.
    pub failures: usize,
    /// Recent novice successes used for specificity.
    pub successes: usize,
    /// Recent decisions used for success and query rates.
    pub decisions: usize,
}

impl Default for MetricWindows {
    fn default() -> Self {
        Self {
            failures: 200,
            successes: 200,
            decisions: 100,
        }
    }
}

/// Moving-window gating metrics measured against ground truth.
#[derive(Debug, Clone)]
pub struct RollingMetrics {
    windows: MetricWindows,
    // `true` when the failure was queried.
    failures: VecDeque<bool>,
    // `true` when the success was not queried.
    successes: VecDeque<bool>,
    // (novice correct, system success, queried)
    decisions: VecDeque<(bool, bool, bool)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub novice_success: Option<f64>,
    pub system_success: Option<f64>,
    pub query_rate: Option<f64>,
}

fn push<T>(q: &mut VecDeque<T>, v: T, cap: usize) {
    if cap == 0 {
        return;
    }
    if q.len() == cap {
        q.pop_front();
    }
    q.push_back(v);
}

fn rate<T>(q: &VecDeque<T>, f: impl Fn(&T) -> bool) -> Option<f64> {
    (!q.is_empty()).then(|| q.iter().filter(|v| f(v)).count() as f64 / q.len() as f64)
}

impl RollingMetrics {
    pub fn new(windows: MetricWindows) -> Self {
        Self {
            windows,
            failures: VecDeque::with_capacity(windows.failures),
            successes: VecDeque::with_capacity(windows.successes),
            decisions: VecDeque::with_capacity(windows.decisions),
        }
    }

    pub fn push(&mut self, novice_correct: bool, queried: bool) {
        if novice_correct {
            push(&mut self.successes, !queried, self.windows.successes);
        } else {
            push(&mut self.failures, queried, self.windows.failures);
        }
        let system = queried || novice_correct;
        push(&mut self.decisions, (novice_correct, system, queried), self.windows.decisions);
    }

    /// Queried failures over all failures in the window.
    pub fn sensitivity(&self) -> Option<f64> {
        rate(&self.failures, |&q| q)
    }

    /// Unqueried successes over all successes in the window.
    pub fn specificity(&self) -> Option<f64> {
        rate(&self.successes, |&u| u)
    }

    pub fn novice_success(&self) -> Option<f64> {
        rate(&self.decisions, |d| d.0)
    }

    pub fn system_success(&self) -> Option<f64> {
        rate(&self.decisions, |d| d.1)
    }

    pub fn query_rate(&self) -> Option<f64> {
        rate(&self.decisions, |d| d.2)
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            sensitivity: self.sensitivity(),
            specificity: self.specificity(),
            novice_success: self.novice_success(),
            system_success: self.system_success(),
            query_rate: self.query_rate(),
        }
    }

    /// Forgets everything, e.g. after a domain shift.
    pub fn clear(&mut self) {
        self.failures.clear();
        self.successes.clear();
        self.decisions.clear();
    }
}
