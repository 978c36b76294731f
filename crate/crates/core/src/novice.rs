//! Goal-conditioned candidate classifier with Monte Carlo dropout.
//!
//! Every candidate's feature block, concatenated with the goal one-hot, goes
//! through the same two-layer scorer; a softmax over the scores gives the
//! pick distribution. Sharing the scorer makes the model equivariant to the
//! order of candidates. At decision time the hidden layer is computed once
//! and `passes` dropout masks are applied to it, one mask per pass shared by
//! all candidates.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DemoDataset, GoalId, Observation};
use crate::error::Error;
use crate::fier::{Policy, Prediction};
use crate::pier::PriorityTable;
use crate::rng::{self, RunRng, Stream};

const LEAK: f64 = 0.01;
const CHECKPOINT_FORMAT: &str = "askdagger-novice";
const CHECKPOINT_VERSION: u32 = 1;

/// How the ensemble-mean distribution is turned into an uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyScore {
    /// `1 - max_y p(y)`.
    #[default]
    LeastConfidence,
    /// Entropy divided by `ln C`.
    Entropy,
}

impl UncertaintyScore {
    pub fn name(self) -> &'static str {
        match self {
            UncertaintyScore::LeastConfidence => "least_confidence",
            UncertaintyScore::Entropy => "entropy",
        }
    }

    pub fn score(self, probs: &[f64]) -> f64 {
        match self {
            UncertaintyScore::LeastConfidence => {
                let max = probs.iter().copied().fold(0.0, f64::max);
                (1.0 - max).clamp(0.0, 1.0)
            }
            UncertaintyScore::Entropy => {
                if probs.len() < 2 {
                    return 0.0;
                }
                let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
                (h / (probs.len() as f64).ln()).clamp(0.0, 1.0)
            }
        }
    }
}

impl std::str::FromStr for UncertaintyScore {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "least_confidence" => Ok(UncertaintyScore::LeastConfidence),
            "entropy" => Ok(UncertaintyScore::Entropy),
            other => Err(format!(
                "unknown uncertainty score `{other}` (expected least_confidence or entropy)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoviceConfig {
    /// Features per candidate block.
    pub block_dim: usize,
    pub n_goals: usize,
    pub hidden: usize,
    pub dropout: f64,
    /// Stochastic forward passes per decision.
    pub passes: usize,
    pub score: UncertaintyScore,
}

impl NoviceConfig {
    pub fn new(block_dim: usize, n_goals: usize) -> Self {
        Self {
            block_dim,
            n_goals,
            hidden: 64,
            dropout: 0.4,
            passes: 16,
            score: UncertaintyScore::LeastConfidence,
        }
    }

    fn input_dim(&self) -> usize {
        self.block_dim + self.n_goals
    }

    /// Length of the flat parameter vector.
    pub fn n_params(&self) -> usize {
        self.hidden * self.input_dim() + 2 * self.hidden
    }
}

/// One weighted training example.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub observation: &'a Observation,
    pub goal: GoalId,
    pub action: usize,
    pub weight: f64,
}

/// Flat parameters: first-layer weights (row-major, one row per hidden unit),
/// first-layer biases, output weights.
#[derive(Debug, Clone)]
pub struct NoviceModel {
    config: NoviceConfig,
    params: Vec<f64>,
    update_count: u64,
    dropout_rng: RunRng,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: NoviceConfig,
    update_count: u64,
    params: Vec<f64>,
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAK * z
    }
}

fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAK
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl NoviceModel {
    pub fn new(config: NoviceConfig, seed: u64) -> Self {
        let mut init = rng::stream(seed, Stream::Init);
        let (h, d_in) = (config.hidden, config.input_dim());
        let w1 = Normal::new(0.0, (2.0 / d_in as f64).sqrt()).expect("finite std");
        let w2 = Normal::new(0.0, (1.0 / h as f64).sqrt()).expect("finite std");
        let mut params = Vec::with_capacity(config.n_params());
        params.extend((0..h * d_in).map(|_| w1.sample(&mut init)));
        params.extend(std::iter::repeat_n(0.0, h));
        params.extend((0..h).map(|_| w2.sample(&mut init)));
        Self {
            config,
            params,
            update_count: 0,
            dropout_rng: rng::stream(seed, Stream::Dropout),
        }
    }

    pub fn config(&self) -> &NoviceConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) {
        assert_eq!(params.len(), self.config.n_params(), "parameter vector length");
        self.params = params;
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    /// Reseeds the dropout stream used at decision time.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = rng::stream(seed, Stream::Dropout);
    }

    fn split(&self) -> (&[f64], &[f64], &[f64]) {
        let (h, d_in) = (self.config.hidden, self.config.input_dim());
        let (w1, rest) = self.params.split_at(h * d_in);
        let (b1, w2) = rest.split_at(h);
        (w1, b1, w2)
    }

    /// Pre-activations of every candidate, `candidates x hidden`.
    fn pre_activations(&self, obs: &Observation, goal: GoalId) -> Vec<f64> {
        let (h, d, d_in) = (self.config.hidden, self.config.block_dim, self.config.input_dim());
        assert_eq!(obs.block_dim(), d, "observation block size");
        let (w1, b1, _) = self.split();
        let g = (goal.0 < self.config.n_goals).then_some(d + goal.0);
        let mut z = Vec::with_capacity(obs.candidates * h);
        for c in 0..obs.candidates {
            let x = obs.candidate(c);
            for j in 0..h {
                let row = &w1[j * d_in..(j + 1) * d_in];
                let mut s = b1[j];
                for (w, xv) in row[..d].iter().zip(x) {
                    s += w * xv;
                }
                if let Some(g) = g {
                    s += row[g];
                }
                z.push(s);
            }
        }
        z
    }

    /// Softmax over candidates for one dropout scaling of the hidden units.
    fn probs_with(&self, act: &[f64], scale: Option<&[f64]>, candidates: usize) -> Vec<f64> {
        let h = self.config.hidden;
        let (_, _, w2) = self.split();
        let mut scores: Vec<f64> = (0..candidates)
            .map(|c| {
                let a = &act[c * h..(c + 1) * h];
                match scale {
                    Some(s) => a.iter().zip(w2).zip(s).map(|((a, w), s)| a * w * s).sum(),
                    None => a.iter().zip(w2).map(|(a, w)| a * w).sum(),
                }
            })
            .collect();
        softmax_in_place(&mut scores);
        scores
    }

    fn draw_scale<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        let p = self.config.dropout;
        (p > 0.0).then(|| {
            let keep = 1.0 / (1.0 - p);
            (0..self.config.hidden)
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect()
        })
    }

    /// Pick distribution without dropout.
    pub fn deterministic_probs(&self, obs: &Observation, goal: GoalId) -> Vec<f64> {
        let act: Vec<f64> = self.pre_activations(obs, goal).into_iter().map(leaky).collect();
        self.probs_with(&act, None, obs.candidates)
    }

    /// Mean pick distribution over the dropout ensemble.
    pub fn ensemble_probs<R: Rng + ?Sized>(&self, obs: &Observation, goal: GoalId, rng: &mut R) -> Vec<f64> {
        let act: Vec<f64> = self.pre_activations(obs, goal).into_iter().map(leaky).collect();
        if self.config.dropout <= 0.0 {
            return self.probs_with(&act, None, obs.candidates);
        }
        let passes = self.config.passes.max(1);
        let mut mean = vec![0.0; obs.candidates];
        for _ in 0..passes {
            let scale = self.draw_scale(rng);
            let p = self.probs_with(&act, scale.as_deref(), obs.candidates);
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= passes as f64;
        }
        mean
    }

    /// Ensemble argmax and uncertainty using the model's own dropout stream.
    pub fn predict(&mut self, obs: &Observation, goal: GoalId) -> Prediction {
        let mut rng = self.dropout_rng.clone();
        let probs = self.ensemble_probs(obs, goal, &mut rng);
        self.dropout_rng = rng;
        Prediction {
            action: argmax(&probs),
            u: self.config.score.score(&probs),
        }
    }

    /// Deterministic greedy pick, used for evaluation rollouts.
    pub fn greedy_action(&self, obs: &Observation, goal: GoalId) -> usize {
        argmax(&self.deterministic_probs(obs, goal))
    }

    /// Weighted mean cross-entropy and its gradient with respect to the flat
    /// parameters. `scales[i]` is example `i`'s dropout scaling of the hidden
    /// units; `None` disables dropout.
    pub fn loss_and_gradient(&self, batch: &[Example<'_>], scales: Option<&[Vec<f64>]>) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate(batch, scales, &mut grad);
        (loss, grad)
    }

    /// Weighted mean cross-entropy only.
    pub fn loss(&self, batch: &[Example<'_>], scales: Option<&[Vec<f64>]>) -> f64 {
        let mut total = 0.0;
        for (i, ex) in batch.iter().enumerate() {
            let act: Vec<f64> = self
                .pre_activations(ex.observation, ex.goal)
                .into_iter()
                .map(leaky)
                .collect();
            let scale = scales.map(|s| s[i].as_slice());
            let p = self.probs_with(&act, scale, ex.observation.candidates);
            total -= ex.weight * p[ex.action].max(f64::MIN_POSITIVE).ln();
        }
        total / batch.len().max(1) as f64
    }

    fn accumulate(&self, batch: &[Example<'_>], scales: Option<&[Vec<f64>]>, grad: &mut [f64]) -> f64 {
        let (h, d, d_in) = (self.config.hidden, self.config.block_dim, self.config.input_dim());
        let (_, _, w2) = self.split();
        let n = batch.len().max(1) as f64;
        let off_b1 = h * d_in;
        let off_w2 = off_b1 + h;
        let mut total = 0.0;
        let mut dz = vec![0.0; h];
        for (i, ex) in batch.iter().enumerate() {
            let obs = ex.observation;
            let z = self.pre_activations(obs, ex.goal);
            let act: Vec<f64> = z.iter().map(|&v| leaky(v)).collect();
            let scale = scales.map(|s| s[i].as_slice());
            let p = self.probs_with(&act, scale, obs.candidates);
            total -= ex.weight * p[ex.action].max(f64::MIN_POSITIVE).ln();
            let g = (ex.goal.0 < self.config.n_goals).then_some(d + ex.goal.0);
            for c in 0..obs.candidates {
                let dscore = ex.weight * (p[c] - if c == ex.action { 1.0 } else { 0.0 }) / n;
                if dscore == 0.0 {
                    continue;
                }
                let a = &act[c * h..(c + 1) * h];
                let zc = &z[c * h..(c + 1) * h];
                for j in 0..h {
                    let s = scale.map_or(1.0, |s| s[j]);
                    grad[off_w2 + j] += dscore * a[j] * s;
                    dz[j] = dscore * w2[j] * s * leaky_grad(zc[j]);
                }
                let x = obs.candidate(c);
                for j in 0..h {
                    let dzj = dz[j];
                    if dzj == 0.0 {
                        continue;
                    }
                    let row = &mut grad[j * d_in..(j + 1) * d_in];
                    for (gw, xv) in row[..d].iter_mut().zip(x) {
                        *gw += dzj * xv;
                    }
                    if let Some(g) = g {
                        row[g] += dzj;
                    }
                    grad[off_b1 + j] += dzj;
                }
            }
        }
        total / n
    }

    /// `steps` minibatch SGD steps on draws from `table`, each example's loss
    /// scaled by its importance weight. Increments the update count.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        dataset: &DemoDataset,
        table: &PriorityTable,
        steps: usize,
        batch_size: usize,
        learning_rate: f64,
        rng: &mut R,
    ) {
        let tuples = dataset.tuples();
        let weights = table.weights();
        let mut grad = vec![0.0; self.params.len()];
        for _ in 0..steps {
            if tuples.is_empty() || batch_size == 0 {
                break;
            }
            let idx = table.sample(batch_size, rng);
            let batch: Vec<Example<'_>> = idx
                .iter()
                .map(|&i| Example {
                    observation: &tuples[i].observation,
                    goal: tuples[i].goal,
                    action: tuples[i].action,
                    weight: weights[i],
                })
                .collect();
            let scales: Option<Vec<Vec<f64>>> = (self.config.dropout > 0.0)
                .then(|| batch.iter().map(|_| self.draw_scale(rng).unwrap_or_default()).collect());
            grad.iter_mut().for_each(|g| *g = 0.0);
            self.accumulate(&batch, scales.as_deref(), &mut grad);
            for (p, g) in self.params.iter_mut().zip(&grad) {
                *p -= learning_rate * g;
            }
        }
        self.update_count += 1;
    }

    pub fn save<W: Write>(&self, out: W) -> Result<(), Error> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            update_count: self.update_count,
            params: self.params.clone(),
        };
        serde_json::to_writer(out, &ck)?;
        Ok(())
    }

    /// Restores a checkpoint; the dropout stream is seeded from `seed`.
    pub fn load<R: Read>(input: R, seed: u64) -> Result<Self, Error> {
        let ck: Checkpoint = serde_json::from_reader(input)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.params.len() != ck.config.n_params() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                ck.config.n_params(),
                ck.params.len()
            )));
        }
        Ok(Self {
            config: ck.config,
            params: ck.params,
            update_count: ck.update_count,
            dropout_rng: rng::stream(seed, Stream::Dropout),
        })
    }
}

impl Policy for NoviceModel {
    fn predict(&mut self, observation: &Observation, goal: GoalId) -> Prediction {
        NoviceModel::predict(self, observation, goal)
    }

    fn update_count(&self) -> u64 {
        self.update_count
    }
}
