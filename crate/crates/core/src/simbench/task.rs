//! A synthetic goal-conditioned pick task.
//!
//! Every attribute has a prototype feature vector. A scene holds
//! `candidates` objects, each rendered as its attribute's prototype plus
//! Gaussian noise, and a command naming one attribute; exactly one candidate
//! carries it. Attributes are split into a seen and an unseen set. Phases
//! choose which set commands come from, how often unseen attributes appear
//! as distractors and which prototype bank renders the features, so a
//! schedule of phases gives a domain shift.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{GoalId, Observation};
use crate::fier::{CandidateView, EnvError, Environment, GoalSet, SceneView, StepOutcome};
use crate::rng::{self, RunRng, Stream};

const NAMES: [&str; 12] = [
    "red", "green", "blue", "yellow", "brown", "gray", "cyan", "orange", "purple", "pink", "white",
    "black",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// Size of the attribute vocabulary; every attribute is a goal.
    pub attributes: usize,
    /// The first `seen` attributes form the seen set, the rest are unseen.
    pub seen: usize,
    pub candidates: usize,
    /// Features per candidate.
    pub features: usize,
    /// Standard deviation of the per-feature noise.
    pub noise: f64,
    /// Standard deviation of prototype entries.
    pub prototype_scale: f64,
    /// Chance that a distractor is an object with no attribute in the goal set.
    pub noise_object_rate: f64,
    /// Decisions per episode.
    pub steps_per_episode: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            attributes: 12,
            seen: 8,
            candidates: 6,
            features: 8,
            noise: 0.35,
            prototype_scale: 0.4,
            noise_object_rate: 0.0,
            steps_per_episode: 1,
        }
    }
}

impl TaskConfig {
    pub fn attribute_name(&self, a: usize) -> String {
        if self.attributes <= NAMES.len() {
            NAMES[a].to_string()
        } else {
            format!("attr{a}")
        }
    }

    pub fn goal_set(&self) -> GoalSet {
        GoalSet::new((0..self.attributes).map(|a| self.attribute_name(a)).collect())
    }

    pub fn pool(&self, pool: AttrPool) -> Vec<usize> {
        match pool {
            AttrPool::Seen => (0..self.seen).collect(),
            AttrPool::Unseen => (self.seen..self.attributes).collect(),
            AttrPool::All => (0..self.attributes).collect(),
        }
    }
}

/// A subset of the attribute vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrPool {
    Seen,
    Unseen,
    All,
}

impl AttrPool {
    pub fn name(self) -> &'static str {
        match self {
            AttrPool::Seen => "seen",
            AttrPool::Unseen => "unseen",
            AttrPool::All => "all",
        }
    }
}

impl fmt::Display for AttrPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttrPool {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seen" => Ok(AttrPool::Seen),
            "unseen" => Ok(AttrPool::Unseen),
            "all" => Ok(AttrPool::All),
            other => Err(format!("unknown attribute pool `{other}` (expected seen, unseen or all)")),
        }
    }
}

/// One segment of the episode schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub episodes: usize,
    /// Where commanded goals come from.
    #[serde(default = "default_commands")]
    pub commands: AttrPool,
    /// Chance that a distractor is drawn from the unseen set.
    #[serde(default = "default_unseen_rate")]
    pub unseen_distractor_rate: f64,
    /// Prototype bank rendering the features.
    #[serde(default)]
    pub bank: u64,
}

fn default_commands() -> AttrPool {
    AttrPool::Seen
}

fn default_unseen_rate() -> f64 {
    0.3
}

impl Phase {
    pub fn new(episodes: usize) -> Self {
        Self {
            episodes,
            commands: default_commands(),
            unseen_distractor_rate: default_unseen_rate(),
            bank: 0,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            self.commands, self.episodes, self.unseen_distractor_rate, self.bank
        )
    }
}

impl FromStr for Phase {
    type Err = String;

    /// `commands:episodes[:unseen_distractor_rate[:bank]]`, e.g. `seen:1000:0.3:0`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts.len() < 2 || parts.len() > 4 {
            return Err(format!(
                "phase `{s}` must look like commands:episodes[:unseen_rate[:bank]]"
            ));
        }
        let commands = parts[0].parse()?;
        let episodes = parts[1]
            .parse()
            .map_err(|_| format!("phase `{s}`: episodes `{}` is not a count", parts[1]))?;
        let mut phase = Phase {
            commands,
            ..Phase::new(episodes)
        };
        if let Some(r) = parts.get(2) {
            phase.unseen_distractor_rate = r
                .parse()
                .ok()
                .filter(|r: &f64| (0.0..=1.0).contains(r))
                .ok_or_else(|| format!("phase `{s}`: unseen rate `{r}` is not in [0, 1]"))?;
        }
        if let Some(b) = parts.get(3) {
            phase.bank = b
                .parse()
                .map_err(|_| format!("phase `{s}`: bank `{b}` is not an integer"))?;
        }
        Ok(phase)
    }
}

/// Parses a comma-separated phase schedule.
pub fn parse_phases(s: &str) -> Result<Vec<Phase>, String> {
    let phases: Vec<Phase> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    if phases.is_empty() {
        return Err("empty phase schedule".to_string());
    }
    Ok(phases)
}

/// Ground truth of a scene: each candidate's attribute (`None` for objects
/// outside the goal set) and where the goal object sits.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub attrs: Vec<Option<GoalId>>,
    pub goal_pos: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub observation: Observation,
    pub goal: GoalId,
    pub truth: SceneTruth,
}

/// Prototype banks of one task instance.
#[derive(Debug, Clone)]
pub struct Prototypes {
    config: TaskConfig,
    seed: u64,
    banks: HashMap<u64, Vec<Vec<f64>>>,
}

impl Prototypes {
    pub fn new(config: TaskConfig, seed: u64) -> Self {
        Self {
            config,
            seed,
            banks: HashMap::new(),
        }
    }

    /// A bank that has already been generated.
    pub fn get(&self, bank: u64) -> Option<&[Vec<f64>]> {
        self.banks.get(&bank).map(Vec::as_slice)
    }

    pub fn bank(&mut self, bank: u64) -> &[Vec<f64>] {
        let (cfg, seed) = (&self.config, self.seed);
        self.banks.entry(bank).or_insert_with(|| {
            let mut rng = rng::indexed_stream(seed, Stream::Prototypes, bank);
            let dist = Normal::new(0.0, cfg.prototype_scale).expect("finite scale");
            (0..cfg.attributes)
                .map(|_| (0..cfg.features).map(|_| dist.sample(&mut rng)).collect())
                .collect()
        })
    }
}

fn pick<R: Rng + ?Sized>(pool: &[usize], exclude: usize, rng: &mut R) -> Option<usize> {
    let n = pool.iter().filter(|&&a| a != exclude).count();
    if n == 0 {
        return None;
    }
    let mut i = rng.random_range(0..n);
    for &a in pool {
        if a == exclude {
            continue;
        }
        if i == 0 {
            return Some(a);
        }
        i -= 1;
    }
    None
}

/// Draws a scene whose command comes from `commands`.
pub fn generate_scene<R: Rng + ?Sized>(
    config: &TaskConfig,
    prototypes: &[Vec<f64>],
    commands: AttrPool,
    unseen_distractor_rate: f64,
    rng: &mut R,
) -> Scene {
    let pool = config.pool(commands);
    let goal = pool[rng.random_range(0..pool.len())];
    let goal_pos = rng.random_range(0..config.candidates);
    let seen = config.pool(AttrPool::Seen);
    let unseen = config.pool(AttrPool::Unseen);
    let noise = Normal::new(0.0, config.noise).expect("finite noise");
    let scale = Normal::new(0.0, config.prototype_scale).expect("finite scale");

    let mut attrs = Vec::with_capacity(config.candidates);
    let mut features = Vec::with_capacity(config.candidates * config.features);
    for slot in 0..config.candidates {
        let attr = if slot == goal_pos {
            Some(goal)
        } else if rng.random::<f64>() < config.noise_object_rate {
            None
        } else {
            let (first, second) = if rng.random::<f64>() < unseen_distractor_rate {
                (&unseen, &seen)
            } else {
                (&seen, &unseen)
            };
            pick(first, goal, rng).or_else(|| pick(second, goal, rng))
        };
        match attr {
            Some(a) => features.extend(prototypes[a].iter().map(|&p| p + noise.sample(rng))),
            None => features.extend((0..config.features).map(|_| scale.sample(rng) + noise.sample(rng))),
        }
        attrs.push(attr.map(GoalId));
    }
    Scene {
        observation: Observation::new(config.candidates, features).expect("consistent block layout"),
        goal: GoalId(goal),
        truth: SceneTruth { attrs, goal_pos },
    }
}

/// The pick task as an [`Environment`].
#[derive(Debug, Clone)]
pub struct SynthEnv {
    config: TaskConfig,
    goals: GoalSet,
    prototypes: Prototypes,
    phases: Vec<Phase>,
    phase: usize,
    rng: RunRng,
    scene: Scene,
    steps_left: usize,
}

impl SynthEnv {
    pub fn new(config: TaskConfig, phases: Vec<Phase>, seed: u64) -> Self {
        assert!(!phases.is_empty(), "at least one phase");
        let mut prototypes = Prototypes::new(config.clone(), seed);
        let mut rng = rng::stream(seed, Stream::Env);
        let bank = prototypes.bank(phases[0].bank).to_vec();
        let scene = generate_scene(
            &config,
            &bank,
            phases[0].commands,
            phases[0].unseen_distractor_rate,
            &mut rng,
        );
        Self {
            goals: config.goal_set(),
            config,
            prototypes,
            phases,
            phase: 0,
            rng,
            scene,
            steps_left: 0,
        }
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn phase(&self) -> usize {
        self.phase
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn set_phase(&mut self, phase: usize) {
        assert!(phase < self.phases.len(), "phase index");
        self.phase = phase;
    }

    pub fn prototypes(&mut self, bank: u64) -> &[Vec<f64>] {
        self.prototypes.bank(bank)
    }

    fn next_scene(&mut self) {
        let phase = self.phases[self.phase].clone();
        let bank = self.prototypes.bank(phase.bank);
        self.scene = generate_scene(
            &self.config,
            bank,
            phase.commands,
            phase.unseen_distractor_rate,
            &mut self.rng,
        );
    }

    /// Scenes for a frozen evaluation, drawn from a fixed stream so every
    /// checkpoint sees the same scenes.
    pub fn evaluation_scenes(&mut self, commands: AttrPool, n: usize, seed: u64) -> Vec<Scene> {
        let phase = self.phases[self.phase].clone();
        let mut rng = rng::indexed_stream(seed, Stream::Eval, commands as u64);
        let config = self.config.clone();
        let bank = self.prototypes.bank(phase.bank);
        (0..n)
            .map(|_| generate_scene(&config, bank, commands, phase.unseen_distractor_rate, &mut rng))
            .collect()
    }

    /// Nearest-prototype attribute name of every candidate in the current scene.
    fn guesses(&self) -> Vec<String> {
        let obs = &self.scene.observation;
        let Some(bank) = self.prototypes.get(self.phases[self.phase].bank) else {
            return vec!["unknown".to_string(); obs.candidates];
        };
        (0..obs.candidates)
            .map(|c| {
                let x = obs.candidate(c);
                let best = bank
                    .iter()
                    .map(|p| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map_or(0, |(i, _)| i);
                self.config.attribute_name(best)
            })
            .collect()
    }
}

impl Environment for SynthEnv {
    type Truth = SceneTruth;

    fn reset(&mut self) -> Result<(Observation, GoalId), EnvError> {
        self.steps_left = self.config.steps_per_episode.max(1);
        self.next_scene();
        Ok((self.scene.observation.clone(), self.scene.goal))
    }

    fn current(&self) -> (&Observation, GoalId) {
        (&self.scene.observation, self.scene.goal)
    }

    fn truth(&self) -> &SceneTruth {
        &self.scene.truth
    }

    fn is_correct(&self, action: usize) -> bool {
        action == self.scene.truth.goal_pos
    }

    fn goals(&self) -> &GoalSet {
        &self.goals
    }

    fn scene_view(&self) -> SceneView {
        let guesses = self.guesses();
        SceneView {
            command: format!(
                "pick the {} object",
                self.goals.name(self.scene.goal).unwrap_or("unknown")
            ),
            candidates: guesses
                .into_iter()
                .enumerate()
                .map(|(index, label)| CandidateView { index, label })
                .collect(),
        }
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        if self.steps_left == 0 {
            return Err(EnvError::EpisodeDone);
        }
        if action >= self.config.candidates {
            return Err(EnvError::InvalidAction {
                action,
                candidates: self.config.candidates,
            });
        }
        let success = self.is_correct(action);
        self.steps_left -= 1;
        let done = self.steps_left == 0;
        if !done {
            self.next_scene();
        }
        Ok(StepOutcome { success, done })
    }
}
