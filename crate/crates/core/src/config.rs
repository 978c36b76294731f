//! Experiment configuration file.
//!
//! A TOML document with one table per component:
//!
//! ```toml
//! [run]
//! name = "sens-0.9"
//! seed = 7
//! episodes = 3000
//!
//! [gating]
//! mode = "sensitivity"
//! sigma_des = 0.9
//! p_rand = 0.1
//!
//! [ablations]
//! no_pier = true
//!
//! [[phases]]
//! commands = "seen"
//! episodes = 1000
//! unseen_distractor_rate = 0.3
//! bank = 0
//! ```
//!
//! Every key is optional. Errors carry the line of the offending key.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fier::FierOptions;
use crate::novice::{NoviceConfig, UncertaintyScore};
use crate::pier::PierConfig;
use crate::sag::{GatingConfig, GatingMode};
use crate::simbench::{MetricWindows, Phase, TaskConfig};

/// A configuration problem, anchored to a line of the source when known.
#[derive(Debug, Error, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "line {l}: `{k}`: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(k)) => write!(f, "`{k}`: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl ConfigError {
    fn invalid(key: &str, message: impl Into<String>) -> Self {
        Self {
            line: None,
            key: Some(key.to_string()),
            message: message.into(),
        }
    }

    fn anchored(mut self, text: &str) -> Self {
        if self.line.is_none() {
            if let Some(key) = &self.key {
                self.line = locate(text, key);
            }
        }
        self
    }
}

/// 1-based line of `section.key` in `text`.
fn locate(text: &str, dotted: &str) -> Option<usize> {
    let (section, key) = dotted.rsplit_once('.').unwrap_or(("", dotted));
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[') {
            current = h.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section {
                header_line.get_or_insert(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub name: String,
    pub seed: u64,
    /// Number of consecutive seeds starting at `seed`.
    pub seeds: usize,
    /// Episode count when no phase schedule is given.
    pub episodes: usize,
    pub out_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            name: "askdagger".to_string(),
            seed: 0,
            seeds: 1,
            episodes: 3000,
            out_dir: "runs".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatingSection {
    pub mode: GatingMode,
    pub sigma_des: f64,
    pub p_rand: f64,
    pub n_min: usize,
    pub n_rep: usize,
}

impl Default for GatingSection {
    fn default() -> Self {
        let g = GatingConfig::default();
        Self {
            mode: g.mode,
            sigma_des: g.sigma_des,
            p_rand: g.p_rand,
            n_min: g.n_min,
            n_rep: g.n_rep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoviceSection {
    pub hidden: usize,
    pub dropout: f64,
    pub passes: usize,
    pub score: UncertaintyScore,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Gradient steps per model update.
    pub gradient_steps: usize,
    /// Decisions between model updates.
    pub update_every: usize,
}

impl Default for NoviceSection {
    fn default() -> Self {
        Self {
            hidden: 64,
            dropout: 0.4,
            passes: 16,
            score: UncertaintyScore::LeastConfidence,
            learning_rate: 0.1,
            batch_size: 16,
            gradient_steps: 8,
            update_every: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSection {
    pub relabel_probability: f64,
}

impl Default for TeacherSection {
    fn default() -> Self {
        Self {
            relabel_probability: 1.0,
        }
    }
}

/// Component switches for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    pub no_fier_relabel: bool,
    /// Validated plans become annotations (annotation-only collection).
    pub no_fier_validate: bool,
    /// Uniform replay with unit weights.
    pub no_pier: bool,
    pub no_sag_imputation: bool,
    pub no_sag_normalization: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 5] = [
        "no_fier_relabel",
        "no_fier_validate",
        "no_pier",
        "no_sag_imputation",
        "no_sag_normalization",
    ];

    pub fn set(&mut self, name: &str) -> Result<(), String> {
        let flag = match name.trim().replace('-', "_").as_str() {
            "no_fier_relabel" => &mut self.no_fier_relabel,
            "no_fier_validate" => &mut self.no_fier_validate,
            "no_pier" => &mut self.no_pier,
            "no_sag_imputation" => &mut self.no_sag_imputation,
            "no_sag_normalization" => &mut self.no_sag_normalization,
            // Annotation-only collection with uniform replay.
            "active_dagger" => {
                self.no_fier_relabel = true;
                self.no_fier_validate = true;
                self.no_pier = true;
                return Ok(());
            }
            other => {
                return Err(format!(
                    "unknown ablation `{other}` (expected one of {}, active_dagger)",
                    Self::NAMES.join(", ")
                ))
            }
        };
        *flag = true;
        Ok(())
    }

    pub fn active(&self) -> Vec<&'static str> {
        let flags = [
            self.no_fier_relabel,
            self.no_fier_validate,
            self.no_pier,
            self.no_sag_imputation,
            self.no_sag_normalization,
        ];
        Self::NAMES
            .iter()
            .zip(flags)
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    #[serde(flatten)]
    pub windows: MetricWindows,
    /// Episodes between metric series samples.
    pub series_every: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            windows: MetricWindows::default(),
            series_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Queries between evaluations of the frozen model; 0 disables them.
    pub every: usize,
    /// Scenes per command set in each evaluation.
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            every: 0,
            episodes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dataset: bool,
    pub model: bool,
    /// Episodes between model checkpoints; 0 writes only the final model.
    pub checkpoint_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dataset: true,
            model: true,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub gating: GatingSection,
    pub pier: PierConfig,
    pub novice: NoviceSection,
    pub task: TaskConfig,
    pub teacher: TeacherSection,
    pub ablations: Ablations,
    pub metrics: MetricsSection,
    pub eval: EvalSection,
    pub output: OutputSection,
    /// Episode schedule; empty means one seen-command phase of
    /// `run.episodes` episodes.
    pub phases: Vec<Phase>,
}

fn unit_open(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            key: None,
            message: e.message().trim().to_string(),
        })?;
        cfg.validate().map_err(|e| e.anchored(text))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            key: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    /// The effective configuration as a TOML document that parses back to
    /// the same value.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Sets a dotted key (for example `gating.sigma_des`) from its textual
    /// value and re-validates.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut doc = toml::Table::try_from(&*self).expect("configuration serializes");
        let parsed: toml::Value = value
            .parse::<toml::Value>()
            .or_else(|_| format!("v = {value}").parse::<toml::Table>().map(|t| t["v"].clone()))
            .unwrap_or_else(|_| toml::Value::String(value.to_string()));
        let mut parts: Vec<&str> = key.split('.').collect();
        let leaf = parts.pop().unwrap_or_default();
        let mut table = &mut doc;
        for p in parts {
            table = table
                .get_mut(p)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| ConfigError::invalid(key, "unknown section"))?;
        }
        if !table.contains_key(leaf) {
            return Err(ConfigError::invalid(key, "unknown key"));
        }
        let parsed = match (&table[leaf], parsed) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(leaf.to_string(), parsed);
        let next: Self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::invalid(key, e.message().trim().to_string()))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.gating;
        if !unit_open(g.sigma_des) {
            return Err(ConfigError::invalid("gating.sigma_des", "must be in (0, 1)"));
        }
        if !(0.0..1.0).contains(&g.p_rand) {
            return Err(ConfigError::invalid("gating.p_rand", "must be in [0, 1)"));
        }
        if g.n_min == 0 {
            return Err(ConfigError::invalid("gating.n_min", "must be positive"));
        }
        if g.n_rep == 0 {
            return Err(ConfigError::invalid("gating.n_rep", "must be positive"));
        }
        let p = &self.pier;
        if p.alpha < 0.0 {
            return Err(ConfigError::invalid("pier.alpha", "must be non-negative"));
        }
        if p.beta < 0.0 {
            return Err(ConfigError::invalid("pier.beta", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&p.lambda) {
            return Err(ConfigError::invalid("pier.lambda", "must be in [0, 1]"));
        }
        if p.base <= 1.0 {
            return Err(ConfigError::invalid("pier.base", "must be greater than 1"));
        }
        let n = &self.novice;
        if n.hidden == 0 {
            return Err(ConfigError::invalid("novice.hidden", "must be positive"));
        }
        if !(0.0..1.0).contains(&n.dropout) {
            return Err(ConfigError::invalid("novice.dropout", "must be in [0, 1)"));
        }
        if n.passes == 0 {
            return Err(ConfigError::invalid("novice.passes", "must be positive"));
        }
        if n.learning_rate < 0.0 {
            return Err(ConfigError::invalid("novice.learning_rate", "must be non-negative"));
        }
        if n.update_every == 0 {
            return Err(ConfigError::invalid("novice.update_every", "must be positive"));
        }
        let t = &self.task;
        if t.candidates < 2 {
            return Err(ConfigError::invalid("task.candidates", "must be at least 2"));
        }
        if t.features == 0 {
            return Err(ConfigError::invalid("task.features", "must be positive"));
        }
        if t.attributes < 2 {
            return Err(ConfigError::invalid("task.attributes", "must be at least 2"));
        }
        if t.seen == 0 || t.seen > t.attributes {
            return Err(ConfigError::invalid("task.seen", "must be in 1..=attributes"));
        }
        if t.noise < 0.0 || t.prototype_scale <= 0.0 {
            return Err(ConfigError::invalid("task.noise", "noise must be >= 0 and prototype_scale > 0"));
        }
        if !(0.0..=1.0).contains(&t.noise_object_rate) {
            return Err(ConfigError::invalid("task.noise_object_rate", "must be in [0, 1]"));
        }
        if t.steps_per_episode == 0 {
            return Err(ConfigError::invalid("task.steps_per_episode", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.teacher.relabel_probability) {
            return Err(ConfigError::invalid("teacher.relabel_probability", "must be in [0, 1]"));
        }
        if self.run.seeds == 0 {
            return Err(ConfigError::invalid("run.seeds", "must be positive"));
        }
        for ph in &self.phases {
            if !(0.0..=1.0).contains(&ph.unseen_distractor_rate) {
                return Err(ConfigError::invalid("phases.unseen_distractor_rate", "must be in [0, 1]"));
            }
            if ph.commands == crate::simbench::AttrPool::Unseen && t.seen == t.attributes {
                return Err(ConfigError::invalid("phases.commands", "no unseen attributes to command"));
            }
        }
        Ok(())
    }

    /// Legal settings that will not behave as the numbers suggest.
    pub fn warnings(&self) -> Vec<String> {
        self.gating_config().warnings()
    }

    pub fn gating_config(&self) -> GatingConfig {
        GatingConfig {
            mode: self.gating.mode,
            sigma_des: self.gating.sigma_des,
            p_rand: self.gating.p_rand,
            n_min: self.gating.n_min,
            n_rep: self.gating.n_rep,
            normalize: !self.ablations.no_sag_normalization,
            impute: !self.ablations.no_sag_imputation,
        }
    }

    pub fn pier_config(&self) -> PierConfig {
        if self.ablations.no_pier {
            PierConfig {
                lambda: self.pier.lambda,
                base: self.pier.base,
                ..PierConfig::uniform()
            }
        } else {
            self.pier
        }
    }

    pub fn fier_options(&self) -> FierOptions {
        FierOptions {
            validate: !self.ablations.no_fier_validate,
            relabel: !self.ablations.no_fier_relabel,
        }
    }

    pub fn novice_config(&self) -> NoviceConfig {
        NoviceConfig {
            hidden: self.novice.hidden,
            dropout: self.novice.dropout,
            passes: self.novice.passes,
            score: self.novice.score,
            ..NoviceConfig::new(self.task.features, self.task.attributes)
        }
    }

    pub fn effective_phases(&self) -> Vec<Phase> {
        if self.phases.is_empty() {
            vec![Phase::new(self.run.episodes)]
        } else {
            self.phases.clone()
        }
    }

    pub fn total_episodes(&self) -> usize {
        self.effective_phases().iter().map(|p| p.episodes).sum()
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.run.seeds as u64).map(|i| self.run.seed + i).collect()
    }

    /// Run identifier for one seed.
    pub fn run_id(&self, seed: u64) -> String {
        format!("{}-seed{seed}", self.run.name)
    }
}
