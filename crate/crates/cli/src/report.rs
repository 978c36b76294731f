//! Aggregation of run directories into plot-ready CSV tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use askdagger_core::config::ExperimentConfig;
use askdagger_core::simbench::{read_steps_csv, RollingMetrics, SegmentStats, StepRow};

use crate::CliError;

/// Per-run scalar metrics, in column order.
pub const RUN_METRICS: [&str; 9] = [
    "sensitivity",
    "specificity",
    "novice_success",
    "system_success",
    "query_rate",
    "decisions",
    "queries",
    "final_seen_success",
    "final_unseen_success",
];

/// Rolling metrics emitted per series point.
pub const SERIES_METRICS: [&str; 6] = [
    "sensitivity",
    "specificity",
    "novice_success",
    "system_success",
    "query_rate",
    "gamma",
];

/// One run directory, parsed.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub steps: Vec<StepRow>,
    pub final_seen_success: Option<f64>,
    pub final_unseen_success: Option<f64>,
}

fn schema(file: &Path, message: impl std::fmt::Display) -> CliError {
    CliError::Schema {
        file: file.display().to_string(),
        message: message.to_string(),
    }
}

fn read_final_eval(path: &Path) -> Result<(Option<f64>, Option<f64>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| schema(path, e))?;
    let headers = r.headers().map_err(|e| schema(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema(path, format!("missing column `{name}`")))
    };
    let (seen, unseen) = (col("seen_success")?, col("unseen_success")?);
    let mut last = None;
    for rec in r.records() {
        last = Some(rec.map_err(|e| schema(path, e))?);
    }
    let Some(rec) = last else {
        return Ok((None, None));
    };
    let num = |i: usize| -> Result<Option<f64>, CliError> {
        match rec.get(i).unwrap_or("") {
            "" => Ok(None),
            s => s.parse().map(Some).map_err(|e| schema(path, format!("`{s}`: {e}"))),
        }
    };
    Ok((num(seen)?, num(unseen)?))
}

impl RunRecord {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let config_path = dir.join("config.toml");
        let config = ExperimentConfig::load(&config_path).map_err(|e| schema(&config_path, e))?;
        let steps_path = dir.join("steps.csv");
        let steps = read_steps_csv(&steps_path).map_err(|e| schema(&steps_path, e))?;
        let seed = match steps.first() {
            Some(r) => r.seed,
            None => config.run.seed,
        };
        let evals_path = dir.join("evals.csv");
        let (final_seen_success, final_unseen_success) = if evals_path.exists() {
            read_final_eval(&evals_path)?
        } else {
            (None, None)
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            seed,
            steps,
            final_seen_success,
            final_unseen_success,
        })
    }

    pub fn run_id(&self) -> String {
        self.config.run_id(self.seed)
    }

    /// Scalar metrics over the final two thirds of the decisions.
    pub fn metrics(&self) -> [Option<f64>; RUN_METRICS.len()] {
        let n = self.steps.len();
        let s = SegmentStats::of(&self.steps[n / 3..]);
        let queries = self.steps.iter().filter(|r| r.queried).count();
        [
            s.sensitivity,
            s.specificity,
            s.novice_success,
            s.system_success,
            s.query_rate,
            Some(n as f64),
            Some(queries as f64),
            self.final_seen_success,
            self.final_unseen_success,
        ]
    }

    /// Rolling metrics every `metrics.series_every` episodes, as
    /// `(episodes done, metric, value)`.
    pub fn series(&self) -> Vec<(u64, &'static str, f64)> {
        let every = self.config.metrics.series_every as u64;
        let mut out = Vec::new();
        if every == 0 {
            return out;
        }
        let mut rolling = RollingMetrics::new(self.config.metrics.windows);
        for (i, row) in self.steps.iter().enumerate() {
            rolling.push(row.novice_correct, row.queried);
            let episode_ends = self.steps.get(i + 1).is_none_or(|next| next.episode != row.episode);
            let done = row.episode + 1;
            if episode_ends && done % every == 0 {
                let m = rolling.snapshot();
                let values = [
                    m.sensitivity,
                    m.specificity,
                    m.novice_success,
                    m.system_success,
                    m.query_rate,
                    Some(row.gamma),
                ];
                for (name, v) in SERIES_METRICS.iter().zip(values) {
                    if let Some(v) = v {
                        out.push((done, *name, v));
                    }
                }
            }
        }
        out
    }
}

/// Run directories under `paths`: each path itself when it holds a
/// `steps.csv`, otherwise every such directory below it, sorted.
pub fn discover(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        if dir.join("steps.csv").is_file() {
            out.push(dir.to_path_buf());
            return Ok(());
        }
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        for e in entries {
            walk(&e, out)?;
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        if !p.is_dir() {
            return Err(CliError::Usage(format!("{}: not a directory", p.display())));
        }
        walk(p, &mut out).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(out)
}

/// Mean, sample standard deviation (empty below two values) and count.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>, usize) {
    let n = values.len();
    if n == 0 {
        return (None, None, 0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    (Some(mean), std, n)
}

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// Runs grouped by configuration name, ordered by mode, target and name.
fn groups(runs: &[RunRecord]) -> Vec<(&str, Vec<&RunRecord>)> {
    let mut by_name: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in runs {
        by_name.entry(r.config.run.name.as_str()).or_default().push(r);
    }
    let mut out: Vec<_> = by_name.into_iter().collect();
    out.sort_by(|(an, a), (bn, b)| {
        let (a, b) = (&a[0].config.gating, &b[0].config.gating);
        (a.mode.name(), a.sigma_des, *an)
            .partial_cmp(&(b.mode.name(), b.sigma_des, *bn))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for (_, rs) in &mut out {
        rs.sort_by_key(|r| r.seed);
    }
    out
}

fn ablation_label(cfg: &ExperimentConfig) -> String {
    let a = cfg.ablations.active();
    if a.is_empty() {
        "none".into()
    } else {
        a.join("+")
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn io(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Writes `runs.csv`, `aggregate.csv`, `series.csv` and `series_mean.csv`
/// into `out` and returns the written paths.
pub fn write_report(runs: &[RunRecord], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let groups = groups(runs);
    let key_cols = ["name", "mode", "sigma_des", "p_rand", "ablations"];
    let key = |c: &ExperimentConfig| {
        vec![
            c.run.name.clone(),
            c.gating.mode.name().to_string(),
            c.gating.sigma_des.to_string(),
            c.gating.p_rand.to_string(),
            ablation_label(c),
        ]
    };

    let runs_path = out.join("runs.csv");
    let mut w = writer(&runs_path)?;
    let mut header: Vec<String> = key_cols.iter().map(|s| s.to_string()).collect();
    header.extend(["run_id".into(), "seed".into()]);
    header.extend(RUN_METRICS.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(io(&runs_path))?;
    for (_, rs) in &groups {
        for r in rs {
            let mut row = key(&r.config);
            row.extend([r.run_id(), r.seed.to_string()]);
            row.extend(r.metrics().into_iter().map(cell));
            w.write_record(&row).map_err(io(&runs_path))?;
        }
    }
    w.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", runs_path.display())))?;

    let agg_path = out.join("aggregate.csv");
    let mut w = writer(&agg_path)?;
    let mut header: Vec<String> = key_cols.iter().map(|s| s.to_string()).collect();
    header.push("n".into());
    for m in RUN_METRICS {
        header.extend([format!("{m}_mean"), format!("{m}_std")]);
    }
    w.write_record(&header).map_err(io(&agg_path))?;
    for (_, rs) in &groups {
        let per_run: Vec<_> = rs.iter().map(|r| r.metrics()).collect();
        let mut row = key(&rs[0].config);
        row.push(rs.len().to_string());
        for i in 0..RUN_METRICS.len() {
            let values: Vec<f64> = per_run.iter().filter_map(|m| m[i]).collect();
            let (mean, std, _) = mean_std(&values);
            row.extend([cell(mean), cell(std)]);
        }
        w.write_record(&row).map_err(io(&agg_path))?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", agg_path.display())))?;

    let series_path = out.join("series.csv");
    let mean_path = out.join("series_mean.csv");
    let mut ws = writer(&series_path)?;
    let mut wm = writer(&mean_path)?;
    ws.write_record(["name", "run_id", "seed", "episode", "metric", "value"])
        .map_err(io(&series_path))?;
    wm.write_record(["name", "episode", "metric", "mean", "std", "n"])
        .map_err(io(&mean_path))?;
    for (name, rs) in &groups {
        let mut pooled: BTreeMap<(u64, usize), Vec<f64>> = BTreeMap::new();
        for r in rs {
            let id = r.run_id();
            for (episode, metric, value) in r.series() {
                ws.write_record([
                    name.to_string(),
                    id.clone(),
                    r.seed.to_string(),
                    episode.to_string(),
                    metric.to_string(),
                    value.to_string(),
                ])
                .map_err(io(&series_path))?;
                let mi = SERIES_METRICS.iter().position(|m| *m == metric).unwrap_or(0);
                pooled.entry((episode, mi)).or_default().push(value);
            }
        }
        for ((episode, mi), values) in pooled {
            let (mean, std, n) = mean_std(&values);
            wm.write_record([
                name.to_string(),
                episode.to_string(),
                SERIES_METRICS[mi].to_string(),
                cell(mean),
                cell(std),
                n.to_string(),
            ])
            .map_err(io(&mean_path))?;
        }
    }
    ws.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", series_path.display())))?;
    wm.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", mean_path.display())))?;
    Ok(vec![runs_path, agg_path, series_path, mean_path])
}
