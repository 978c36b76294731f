use std::path::PathBuf;

use askdagger_core::config::{ConfigError, ExperimentConfig};
use askdagger_core::simbench::parse_phases;
use clap::Args;

use crate::CliError;

/// Environment variable that replaces `--out` when set.
pub const OUT_ENV: &str = "ASKD_OUT";

/// Configuration file plus per-key overrides shared by the subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Configuration file; built-in defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Gating mode: sensitivity, specificity or success.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long = "sigma-des", value_name = "X")]
    pub sigma_des: Option<f64>,
    #[arg(long = "p-rand", value_name = "X")]
    pub p_rand: Option<f64>,
    #[arg(long = "n-min", value_name = "N")]
    pub n_min: Option<usize>,
    #[arg(long = "n-rep", value_name = "N")]
    pub n_rep: Option<usize>,
    #[arg(long, value_name = "X")]
    pub alpha: Option<f64>,
    #[arg(long, value_name = "X")]
    pub beta: Option<f64>,
    #[arg(long, value_name = "X")]
    pub lambda: Option<f64>,
    #[arg(long, value_name = "X")]
    pub base: Option<f64>,
    /// First seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub episodes: Option<u64>,
    /// Comma-separated ablation flags, e.g. `no_pier,no_fier_relabel`.
    #[arg(long, value_delimiter = ',', value_name = "FLAG,...")]
    pub ablate: Vec<String>,
    /// Phase schedule `commands:episodes[:unseen_rate[:bank]],...`.
    #[arg(long, value_name = "SCHEDULE")]
    pub phases: Option<String>,
    /// Output root; `ASKD_OUT` takes precedence.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Any other configuration key, e.g. `--set novice.dropout=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Maps a flag-style name (`sigma-des`) to its configuration key.
pub fn config_key(name: &str) -> String {
    match name {
        "mode" => "gating.mode",
        "sigma-des" | "sigma_des" => "gating.sigma_des",
        "p-rand" | "p_rand" => "gating.p_rand",
        "n-min" | "n_min" => "gating.n_min",
        "n-rep" | "n_rep" => "gating.n_rep",
        "alpha" => "pier.alpha",
        "beta" => "pier.beta",
        "lambda" => "pier.lambda",
        "base" => "pier.base",
        "seed" => "run.seed",
        "seeds" => "run.seeds",
        "episodes" => "run.episodes",
        other => return other.to_string(),
    }
    .to_string()
}

fn flag_error(flag: &str, e: ConfigError) -> CliError {
    CliError::Usage(format!("--{flag}: {e}"))
}

impl ConfigArgs {
    pub fn build(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(|e| CliError::Config {
                path: path.display().to_string(),
                error: e,
            })?,
            None => ExperimentConfig::default(),
        };
        let numeric: [(&str, Option<String>); 12] = [
            ("mode", self.mode.clone()),
            ("sigma-des", self.sigma_des.map(|v| v.to_string())),
            ("p-rand", self.p_rand.map(|v| v.to_string())),
            ("n-min", self.n_min.map(|v| v.to_string())),
            ("n-rep", self.n_rep.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("beta", self.beta.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("base", self.base.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("seeds", self.seeds.map(|v| v.to_string())),
            ("episodes", self.episodes.map(|v| v.to_string())),
        ];
        for (flag, value) in numeric {
            if let Some(v) = value {
                cfg.set(&config_key(flag), &v).map_err(|e| flag_error(flag, e))?;
            }
        }
        for a in &self.ablate {
            if a.trim().is_empty() || a == "none" {
                continue;
            }
            cfg.ablations.set(a).map_err(|e| CliError::Usage(format!("--ablate: {e}")))?;
        }
        if let Some(p) = &self.phases {
            cfg.phases = parse_phases(p).map_err(|e| CliError::Usage(format!("--phases: {e}")))?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set: expected KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| flag_error("set", e))?;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// Output root: `ASKD_OUT`, then `--out`, then `run.out_dir`. Kept out of
    /// the configuration so the echoed config does not depend on it.
    pub fn out_root(&self, cfg: &ExperimentConfig) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.run.out_dir)),
        }
    }
}

/// One swept parameter: a configuration key and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<String>,
}

impl Sweep {
    /// Parses `a:b:step` (inclusive) or a comma-separated list.
    pub fn parse(key: &str, spec: &str) -> Result<Self, CliError> {
        let bad = |m: String| CliError::Usage(format!("--sweep {key} {spec}: {m}"));
        let values = if spec.contains(':') {
            let parts: Vec<&str> = spec.split(':').collect();
            let [a, b, step] = parts[..] else {
                return Err(bad("expected start:stop:step".into()));
            };
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if step.is_nan() || step <= 0.0 || b < a {
                return Err(bad("need step > 0 and stop >= start".into()));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            (0..=n)
                .map(|i| {
                    let v = ((a + i as f64 * step) * 1e9).round() / 1e9;
                    v.to_string()
                })
                .collect()
        } else {
            spec.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect::<Vec<_>>()
        };
        if values.is_empty() {
            return Err(bad("no values".into()));
        }
        Ok(Self {
            key: config_key(key),
            values,
        })
    }

    /// One configuration per value, each with a distinct run name.
    pub fn expand(&self, base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>, CliError> {
        let leaf = self.key.rsplit('.').next().unwrap_or(&self.key);
        self.values
            .iter()
            .map(|v| {
                let mut cfg = base.clone();
                cfg.set(&self.key, v).map_err(|e| CliError::Usage(format!("--sweep: {e}")))?;
                cfg.run.name = format!("{}-{leaf}{v}", base.run.name);
                Ok(cfg)
            })
            .collect()
    }
}
