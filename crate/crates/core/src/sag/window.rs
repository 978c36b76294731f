use crate::dataset::{FeedbackRecord, Reward};

use super::regression::linear_fit;
use super::GatingMode;

/// Teacher-derived failure label of a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    /// The teacher rejected the plan (`f = +1`).
    Failure,
    /// The teacher validated the plan (`f = -1`).
    Success,
    /// The teacher was not queried.
    Unknown,
}

impl Label {
    pub fn from_reward(r: Reward) -> Self {
        match r {
            Reward::Failure => Label::Failure,
            Reward::Success => Label::Success,
            Reward::Neutral => Label::Unknown,
        }
    }

    pub fn known(self) -> Option<bool> {
        match self {
            Label::Failure => Some(true),
            Label::Success => Some(false),
            Label::Unknown => None,
        }
    }
}

/// The recent slice of the feedback history used to set the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub u: Vec<f64>,
    pub labels: Vec<Label>,
    pub k: Vec<u64>,
    pub start: usize,
}

impl LabeledWindow {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

fn is_relevant(r: Reward, mode: GatingMode) -> bool {
    match mode {
        GatingMode::Sensitivity => r == Reward::Failure,
        GatingMode::Specificity => r == Reward::Success,
        GatingMode::Success => r != Reward::Neutral,
    }
}

/// Smallest suffix of `records` holding at least `n_min` labels relevant to
/// `mode`; the whole history when there are fewer.
pub fn get_window(records: &[FeedbackRecord], n_min: usize, mode: GatingMode) -> LabeledWindow {
    let mut start = 0;
    let mut seen = 0;
    for (i, rec) in records.iter().enumerate().rev() {
        if is_relevant(rec.r, mode) {
            seen += 1;
            if seen >= n_min {
                start = i;
                break;
            }
        }
    }
    let slice = &records[start..];
    LabeledWindow {
        u: slice.iter().map(|r| r.u).collect(),
        labels: slice.iter().map(|r| Label::from_reward(r.r)).collect(),
        k: slice.iter().map(|r| r.k).collect(),
        start,
    }
}

/// Shifts each uncertainty to its expected value at update count
/// `current_k`, using the least-squares trend of `u` over `k`.
pub fn normalize_uncertainties(mut window: LabeledWindow, current_k: u64) -> LabeledWindow {
    let ks: Vec<f64> = window.k.iter().map(|&k| k as f64).collect();
    let (slope, _) = linear_fit(&ks, &window.u);
    if slope != 0.0 {
        let current = current_k as f64;
        for (u, k) in window.u.iter_mut().zip(&ks) {
            *u = (*u + slope * (current - k)).clamp(0.0, 1.0);
        }
    }
    window
}
