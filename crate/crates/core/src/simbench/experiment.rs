//! The data-aggregation loop on the synthetic task, with logging.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::{Composition, DemoDataset, DemoKind, DemoTuple, FeedbackRecord, Reward};
use crate::error::Error;
use crate::fier::{run_episode, Teacher};
use crate::novice::NoviceModel;
use crate::pier::build_table;
use crate::rng::{self, Stream};
use crate::sag::Gate;

use super::metrics::{MetricsSnapshot, RollingMetrics};
use super::task::{AttrPool, SceneTruth, SynthEnv};
use super::teacher::OracleTeacher;

/// One row of `steps.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub run_id: String,
    pub seed: u64,
    pub phase: usize,
    pub episode: u64,
    pub step: u64,
    pub k: u64,
    pub u: f64,
    pub gamma: f64,
    pub queried: bool,
    pub reason: String,
    pub reward: i8,
    /// Kind of the first tuple collected, empty when nothing was collected.
    pub kind: String,
    pub novice_correct: bool,
    pub system_success: bool,
    pub goal: usize,
    pub action: usize,
}

pub const STEP_COLUMNS: [&str; 16] = [
    "run_id",
    "seed",
    "phase",
    "episode",
    "step",
    "k",
    "u",
    "gamma",
    "queried",
    "reason",
    "reward",
    "kind",
    "novice_correct",
    "system_success",
    "goal",
    "action",
];

/// Greedy success of the frozen model on fixed evaluation scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub episode: u64,
    pub queries: usize,
    pub demonstrations: usize,
    pub annotations: usize,
    pub seen_success: f64,
    /// `None` when the task has no unseen attributes.
    pub unseen_success: Option<f64>,
}

/// Rolling metrics sampled every `metrics.series_every` episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub episode: u64,
    pub decisions: usize,
    pub queries: usize,
    #[serde(with = "crate::sag::threshold_json")]
    pub gamma: f64,
    #[serde(flatten)]
    pub metrics: MetricsSnapshot,
}

/// Ground-truth rates over a contiguous range of decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub decisions: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub novice_success: Option<f64>,
    pub system_success: Option<f64>,
    pub query_rate: Option<f64>,
}

impl SegmentStats {
    pub fn of(rows: &[StepRow]) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let failures = rows.iter().filter(|r| !r.novice_correct).count();
        let successes = rows.len() - failures;
        let caught = rows.iter().filter(|r| !r.novice_correct && r.queried).count();
        let passed = rows.iter().filter(|r| r.novice_correct && !r.queried).count();
        let system = rows.iter().filter(|r| r.system_success).count();
        let queries = rows.iter().filter(|r| r.queried).count();
        Self {
            decisions: rows.len(),
            sensitivity: ratio(caught, failures),
            specificity: ratio(passed, successes),
            novice_success: ratio(successes, rows.len()),
            system_success: ratio(system, rows.len()),
            query_rate: ratio(queries, rows.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub episodes: u64,
    pub decisions: usize,
    pub queries: usize,
    pub updates: u64,
    pub aborted_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub seed: u64,
    pub gating_mode: String,
    pub uncertainty_score: String,
    pub ablations: Vec<String>,
    pub warnings: Vec<String>,
    pub totals: Totals,
    pub composition: Composition,
    /// Rates over the first third, the last two thirds and the last third of
    /// all decisions.
    pub first_third: SegmentStats,
    pub final_two_thirds: SegmentStats,
    pub final_third: SegmentStats,
    pub series: Vec<SeriesPoint>,
    pub evals: Vec<EvalPoint>,
    pub config: ExperimentConfig,
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: RunSummary,
    pub steps: Vec<StepRow>,
    pub dataset: DemoDataset,
    pub model: NoviceModel,
    pub checkpoints: Vec<(u64, NoviceModel)>,
}

/// Hooks for live consumers of a run.
pub trait RunObserver {
    fn on_step(&mut self, _row: &StepRow) {}
    /// Tuples and their records, just before they join the dataset.
    fn on_collect(&mut self, _tuples: &[DemoTuple], _records: &[FeedbackRecord]) {}
    fn on_episode(&mut self, _episode: u64, _metrics: &MetricsSnapshot) {}
    fn on_eval(&mut self, _point: &EvalPoint) {}
}

pub struct NoObserver;

impl RunObserver for NoObserver {}

fn evaluate(model: &NoviceModel, env: &mut SynthEnv, pool: AttrPool, n: usize, seed: u64) -> f64 {
    let scenes = env.evaluation_scenes(pool, n, seed);
    if scenes.is_empty() {
        return 0.0;
    }
    let hits = scenes
        .iter()
        .filter(|s| model.greedy_action(&s.observation, s.goal) == s.truth.goal_pos)
        .count();
    hits as f64 / scenes.len() as f64
}

/// Runs one seed against the oracle teacher.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunResult, Error> {
    let mut teacher = OracleTeacher::new(config.teacher.relabel_probability, seed);
    run_experiment_with(config, seed, &mut teacher, &mut NoObserver)
}

/// Runs one seed with any teacher, reporting progress to `observer`.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    seed: u64,
    teacher: &mut dyn Teacher<SceneTruth>,
    observer: &mut dyn RunObserver,
) -> Result<RunResult, Error> {
    config.validate()?;
    let warnings = config.warnings();
    for w in &warnings {
        log::warn!("{w}");
    }
    let run_id = config.run_id(seed);
    let phases = config.effective_phases();
    let mut env = SynthEnv::new(config.task.clone(), phases.clone(), seed);
    let mut model = NoviceModel::new(config.novice_config(), seed);
    let mut gate = Gate::new(config.gating_config(), seed);
    let options = config.fier_options();
    let pier = config.pier_config();
    let mut sampling = rng::stream(seed, Stream::Sampling);
    let mut dataset = DemoDataset::new();
    let mut history = Vec::new();
    let mut metrics = RollingMetrics::new(config.metrics.windows);
    let mut steps = Vec::new();
    let mut series = Vec::new();
    let mut evals = Vec::new();
    let mut checkpoints = Vec::new();
    let mut queries = 0usize;
    let mut decisions = 0usize;
    let mut aborted = 0usize;
    let mut last_gamma = 0.0;
    let mut next_eval = config.eval.every;
    let has_unseen = config.task.seen < config.task.attributes;

    let eval_point = |model: &NoviceModel, env: &mut SynthEnv, episode: u64, queries: usize, dataset: &DemoDataset| {
        let composition = dataset.composition_counts();
        EvalPoint {
            episode,
            queries,
            demonstrations: dataset.len(),
            annotations: composition.get(DemoKind::Annotation),
            seen_success: evaluate(model, env, AttrPool::Seen, config.eval.episodes, seed),
            unseen_success: has_unseen
                .then(|| evaluate(model, env, AttrPool::Unseen, config.eval.episodes, seed)),
        }
    };

    let mut episode = 0u64;
    for (phase_index, phase) in phases.iter().enumerate() {
        env.set_phase(phase_index);
        for _ in 0..phase.episodes {
            let ep = run_episode(&mut env, &mut model, teacher, &mut gate, &options, &mut history, episode)?;
            if let Some(e) = &ep.aborted {
                log::warn!("episode {episode} aborted: {e}");
                aborted += 1;
            }
            if !ep.tuples.is_empty() {
                observer.on_collect(&ep.tuples, &ep.tuple_records);
            }
            dataset.append_trajectory(ep.tuples, ep.tuple_records)?;
            for s in &ep.steps {
                metrics.push(s.novice_correct, s.decision.queried);
                last_gamma = s.decision.gamma;
                let row = StepRow {
                    run_id: run_id.clone(),
                    seed,
                    phase: phase_index,
                    episode,
                    step: s.step,
                    k: s.k,
                    u: s.u,
                    gamma: s.decision.gamma,
                    queried: s.decision.queried,
                    reason: s.decision.reason.name().to_string(),
                    reward: s.reward.value(),
                    kind: s.kind.map_or(String::new(), |k| k.name().to_string()),
                    novice_correct: s.novice_correct,
                    system_success: s.system_success,
                    goal: s.goal.0,
                    action: s.executed_action,
                };
                observer.on_step(&row);
                steps.push(row);
                decisions += 1;
                if s.decision.queried {
                    queries += 1;
                }
                if decisions.is_multiple_of(config.novice.update_every) && !dataset.is_empty() {
                    let table = build_table(&dataset, model.update_count(), &pier)?;
                    model.update(
                        &dataset,
                        &table,
                        config.novice.gradient_steps,
                        config.novice.batch_size,
                        config.novice.learning_rate,
                        &mut sampling,
                    );
                }
            }
            let snapshot = metrics.snapshot();
            observer.on_episode(episode, &snapshot);
            episode += 1;
            if config.metrics.series_every > 0 && episode.is_multiple_of(config.metrics.series_every as u64) {
                series.push(SeriesPoint {
                    episode,
                    decisions,
                    queries,
                    gamma: last_gamma,
                    metrics: snapshot,
                });
            }
            if config.eval.every > 0 && queries >= next_eval {
                while next_eval <= queries {
                    next_eval += config.eval.every;
                }
                let p = eval_point(&model, &mut env, episode, queries, &dataset);
                observer.on_eval(&p);
                evals.push(p);
            }
            if config.output.checkpoint_every > 0 && episode.is_multiple_of(config.output.checkpoint_every as u64) {
                checkpoints.push((episode, model.clone()));
            }
        }
    }
    if config.eval.episodes > 0 {
        let p = eval_point(&model, &mut env, episode, queries, &dataset);
        observer.on_eval(&p);
        evals.push(p);
    }

    let n = steps.len();
    let summary = RunSummary {
        run_id,
        seed,
        gating_mode: config.gating.mode.name().to_string(),
        uncertainty_score: config.novice.score.name().to_string(),
        ablations: config.ablations.active().iter().map(|s| s.to_string()).collect(),
        warnings,
        totals: Totals {
            episodes: episode,
            decisions,
            queries,
            updates: model.update_count(),
            aborted_episodes: aborted,
        },
        composition: dataset.composition_counts(),
        first_third: SegmentStats::of(&steps[..n / 3]),
        final_two_thirds: SegmentStats::of(&steps[n / 3..]),
        final_third: SegmentStats::of(&steps[n - n / 3..]),
        series,
        evals,
        config: config.clone(),
    };
    Ok(RunResult {
        summary,
        steps,
        dataset,
        model,
        checkpoints,
    })
}

pub fn write_steps_csv<W: Write>(rows: &[StepRow], out: W) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(STEP_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_evals_csv<W: Write>(points: &[EvalPoint], out: W) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "queries", "demonstrations", "annotations", "seen_success", "unseen_success"])?;
    for p in points {
        w.write_record([
            p.episode.to_string(),
            p.queries.to_string(),
            p.demonstrations.to_string(),
            p.annotations.to_string(),
            p.seen_success.to_string(),
            p.unseen_success.map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

impl RunResult {
    /// Writes the run's artifacts into `dir`, creating it if needed.
    ///
    /// `steps.csv`, `evals.csv`, `summary.json`, `config.toml` and, when
    /// enabled, `dataset.jsonl`, `model.json` and `checkpoints/`.
    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        fs::create_dir_all(dir)?;
        write_steps_csv(&self.steps, BufWriter::new(File::create(dir.join("steps.csv"))?))?;
        write_evals_csv(&self.summary.evals, BufWriter::new(File::create(dir.join("evals.csv"))?))?;
        let mut f = BufWriter::new(File::create(dir.join("summary.json"))?);
        serde_json::to_writer_pretty(&mut f, &self.summary)?;
        f.write_all(b"\n")?;
        f.flush()?;
        fs::write(dir.join("config.toml"), self.summary.config.echo())?;
        let output = &self.summary.config.output;
        if output.dataset {
            let mut f = BufWriter::new(File::create(dir.join("dataset.jsonl"))?);
            self.dataset.write_jsonl(&mut f)?;
            f.flush()?;
        }
        if output.model {
            let mut f = BufWriter::new(File::create(dir.join("model.json"))?);
            self.model.save(&mut f)?;
            f.flush()?;
        }
        if !self.checkpoints.is_empty() {
            let cdir = dir.join("checkpoints");
            fs::create_dir_all(&cdir)?;
            for (ep, m) in &self.checkpoints {
                let mut f = BufWriter::new(File::create(cdir.join(format!("model-ep{ep:06}.json")))?);
                m.save(&mut f)?;
                f.flush()?;
            }
        }
        Ok(())
    }
}

/// Directory of one seed's artifacts under `root`.
pub fn run_dir(root: &Path, config: &ExperimentConfig, seed: u64) -> PathBuf {
    root.join(config.run_id(seed))
}

/// Reads `steps.csv` back, checking the header.
pub fn read_steps_csv(path: &Path) -> Result<Vec<StepRow>, Error> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != STEP_COLUMNS {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{}: unexpected columns {:?}", path.display(), header),
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Decision reward of a row, for consumers of parsed logs.
pub fn row_reward(row: &StepRow) -> Option<Reward> {
    Reward::try_from(row.reward as i64).ok()
}
