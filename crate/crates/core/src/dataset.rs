//! Demonstrations, feedback records and the aggregated dataset.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error};

/// Identifier of a goal in the finite goal set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoalId(pub usize);

impl fmt::Display for GoalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Teacher reward attached to a decision or a tuple.
///
/// `Success` (+1) when the teacher validated the novice plan, `Failure` (-1)
/// when the teacher rejected it and annotated, `Neutral` (0) otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Reward {
    Failure,
    Neutral,
    Success,
}

impl Reward {
    pub fn value(self) -> i8 {
        match self {
            Reward::Failure => -1,
            Reward::Neutral => 0,
            Reward::Success => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }
}

impl TryFrom<i64> for Reward {
    type Error = DataError;

    fn try_from(v: i64) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(Reward::Failure),
            0 => Ok(Reward::Neutral),
            1 => Ok(Reward::Success),
            other => Err(DataError::RewardValue(other)),
        }
    }
}

impl From<Reward> for i64 {
    fn from(r: Reward) -> i64 {
        i64::from(r.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoKind {
    Validation,
    Annotation,
    Relabeled,
    Seed,
}

impl DemoKind {
    pub const ALL: [DemoKind; 4] = [
        DemoKind::Validation,
        DemoKind::Annotation,
        DemoKind::Relabeled,
        DemoKind::Seed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DemoKind::Validation => "validation",
            DemoKind::Annotation => "annotation",
            DemoKind::Relabeled => "relabeled",
            DemoKind::Seed => "seed",
        }
    }

    /// The only reward a tuple of this kind may carry.
    pub fn reward(self) -> Reward {
        match self {
            DemoKind::Validation => Reward::Success,
            DemoKind::Annotation => Reward::Failure,
            DemoKind::Relabeled | DemoKind::Seed => Reward::Neutral,
        }
    }
}

impl fmt::Display for DemoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A scene as seen by the novice: `candidates` equally sized feature blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub candidates: usize,
    pub features: Vec<f64>,
}

impl Observation {
    pub fn new(candidates: usize, features: Vec<f64>) -> Result<Self, DataError> {
        if candidates == 0 || !features.len().is_multiple_of(candidates) {
            return Err(DataError::ObservationShape {
                len: features.len(),
                candidates,
            });
        }
        Ok(Self {
            candidates,
            features,
        })
    }

    pub fn block_dim(&self) -> usize {
        self.features.len() / self.candidates
    }

    pub fn candidate(&self, i: usize) -> &[f64] {
        let d = self.block_dim();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn check_action(&self, action: usize) -> Result<(), DataError> {
        if action < self.candidates {
            Ok(())
        } else {
            Err(DataError::ActionOutOfRange {
                action,
                candidates: self.candidates,
            })
        }
    }
}

/// One demonstration `(o, a, g, r)` plus how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoTuple {
    pub observation: Observation,
    pub action: usize,
    pub goal: GoalId,
    pub reward: Reward,
    pub kind: DemoKind,
}

impl DemoTuple {
    /// Builds a tuple whose reward is implied by its kind.
    pub fn new(
        observation: Observation,
        action: usize,
        goal: GoalId,
        kind: DemoKind,
    ) -> Result<Self, DataError> {
        let tuple = Self {
            observation,
            action,
            goal,
            reward: kind.reward(),
            kind,
        };
        tuple.validate()?;
        Ok(tuple)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let expected = self.kind.reward();
        if self.reward != expected {
            return Err(DataError::RewardKind {
                kind: self.kind.name(),
                expected: expected.value(),
                actual: self.reward.value(),
            });
        }
        self.observation.check_action(self.action)
    }
}

/// Per-decision feedback: uncertainty `u`, teacher reward `r` and the model
/// version `k` at decision time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub u: f64,
    pub r: Reward,
    pub k: u64,
    pub queried: bool,
    pub episode: u64,
    pub step: u64,
}

impl FeedbackRecord {
    /// The neutral record carried by offline seed tuples.
    pub fn seed() -> Self {
        Self {
            u: 0.0,
            r: Reward::Neutral,
            k: 0,
            queried: false,
            episode: 0,
            step: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.u) {
            return Err(DataError::Uncertainty(self.u));
        }
        if !self.queried && self.r != Reward::Neutral {
            return Err(DataError::UnqueriedReward);
        }
        Ok(())
    }
}

/// Count of tuples per demonstration kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Composition {
    pub validation: usize,
    pub annotation: usize,
    pub relabeled: usize,
    pub seed: usize,
}

impl Composition {
    pub fn add(&mut self, kind: DemoKind) {
        *self.slot(kind) += 1;
    }

    pub fn get(&self, kind: DemoKind) -> usize {
        match kind {
            DemoKind::Validation => self.validation,
            DemoKind::Annotation => self.annotation,
            DemoKind::Relabeled => self.relabeled,
            DemoKind::Seed => self.seed,
        }
    }

    fn slot(&mut self, kind: DemoKind) -> &mut usize {
        match kind {
            DemoKind::Validation => &mut self.validation,
            DemoKind::Annotation => &mut self.annotation,
            DemoKind::Relabeled => &mut self.relabeled,
            DemoKind::Seed => &mut self.seed,
        }
    }

    pub fn total(&self) -> usize {
        self.validation + self.annotation + self.relabeled + self.seed
    }

    pub fn as_map(&self) -> BTreeMap<DemoKind, usize> {
        DemoKind::ALL.iter().map(|&k| (k, self.get(k))).collect()
    }
}

/// Append-only demonstration dataset.
///
/// `records[i]` is the feedback record of the decision that produced
/// `tuples[i]`; insertion order is the `(k, t)` identity used for replay.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemoDataset {
    tuples: Vec<DemoTuple>,
    records: Vec<FeedbackRecord>,
}

impl DemoDataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// A dataset pre-filled with offline seed demonstrations.
    pub fn with_seed(tuples: Vec<DemoTuple>) -> Result<Self, DataError> {
        let mut ds = Self::new();
        let records = vec![FeedbackRecord::seed(); tuples.len()];
        ds.append_trajectory(tuples, records)?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[DemoTuple] {
        &self.tuples
    }

    pub fn records(&self) -> &[FeedbackRecord] {
        &self.records
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DemoTuple, &FeedbackRecord)> {
        self.tuples.iter().zip(self.records.iter())
    }

    /// Appends one episode's tuples with their aligned feedback records.
    ///
    /// Nothing is appended when validation fails.
    pub fn append_trajectory(
        &mut self,
        trajectory: Vec<DemoTuple>,
        records: Vec<FeedbackRecord>,
    ) -> Result<(), DataError> {
        if trajectory.len() != records.len() {
            return Err(DataError::Alignment {
                tuples: trajectory.len(),
                records: records.len(),
            });
        }
        let mut last = self.records.last().map_or(0, |r| r.k);
        for (tuple, record) in trajectory.iter().zip(&records) {
            tuple.validate()?;
            record.validate()?;
            if record.k < last {
                return Err(DataError::UpdateOrder { k: record.k, last });
            }
            last = record.k;
        }
        self.tuples.extend(trajectory);
        self.records.extend(records);
        Ok(())
    }

    pub fn composition_counts(&self) -> Composition {
        let mut c = Composition::default();
        for t in &self.tuples {
            c.add(t.kind);
        }
        c
    }

    /// Writes one JSON object per tuple.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), Error> {
        for (tuple, record) in self.iter() {
            let row = JsonlRow {
                obs: tuple.observation.clone(),
                action: tuple.action,
                goal: tuple.goal,
                reward: tuple.reward,
                kind: tuple.kind,
                u: record.u,
                r: record.r,
                k: record.k,
                episode: record.episode,
                step: record.step,
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, Error> {
        let mut tuples = Vec::new();
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: JsonlRow = serde_json::from_str(&line)?;
            tuples.push(DemoTuple {
                observation: row.obs,
                action: row.action,
                goal: row.goal,
                reward: row.reward,
                kind: row.kind,
            });
            records.push(FeedbackRecord {
                u: row.u,
                r: row.r,
                k: row.k,
                // Only offline seed tuples enter the dataset without a query.
                queried: row.kind != DemoKind::Seed,
                episode: row.episode,
                step: row.step,
            });
        }
        let mut ds = Self::new();
        ds.append_trajectory(tuples, records)?;
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRow {
    obs: Observation,
    action: usize,
    goal: GoalId,
    reward: Reward,
    kind: DemoKind,
    u: f64,
    r: Reward,
    k: u64,
    episode: u64,
    step: u64,
}
