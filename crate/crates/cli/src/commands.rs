use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use askdagger_core::config::{Ablations, ExperimentConfig};
use askdagger_core::simbench::{run_dir, run_experiment, RunSummary};
use askdagger_serve::{router, AppState, Fallback, ServeOptions, Session};
use clap::Args;
use rayon::prelude::*;

use crate::args::{ConfigArgs, Sweep};
use crate::report::{discover, write_report, RunRecord};
use crate::CliError;

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Sweep one key over `start:stop:step` or `a,b,c`, e.g.
    /// `--sweep sigma-des 0.1:0.9:0.1`.
    #[arg(long, num_args = 2, value_names = ["KEY", "VALUES"])]
    pub sweep: Option<Vec<String>>,
    /// Runs executed in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Variants to run; `none` is the full method.
    #[arg(long, value_delimiter = ',', default_values_t = default_variants())]
    pub variants: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

fn default_variants() -> Vec<String> {
    std::iter::once("none")
        .chain(Ablations::NAMES)
        .chain(["active_dagger"])
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directories, or directories containing them.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Where the tables are written.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Run directories, or directories containing them.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8089)]
    pub port: u16,
    /// `block` or `oracle_after_timeout`.
    #[arg(long, default_value = "oracle_after_timeout")]
    pub fallback: Fallback,
    /// Seconds to wait for feedback before the oracle answers.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    /// Episodes between metrics_update events.
    #[arg(long, default_value_t = 10)]
    pub metrics_every: u64,
    /// Events kept per session for reconnecting clients.
    #[arg(long, default_value_t = 1000)]
    pub buffer: usize,
    /// Stop serving once every session has finished.
    #[arg(long)]
    pub exit_when_done: bool,
}

fn summary_line(s: &RunSummary, dir: &Path) -> String {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    let seg = &s.final_two_thirds;
    format!(
        "{}: {} decisions, {} queries; last two thirds sensitivity {} specificity {} system success {} -> {}",
        s.run_id,
        s.totals.decisions,
        s.totals.queries,
        f(seg.sensitivity),
        f(seg.specificity),
        f(seg.system_success),
        dir.display()
    )
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

/// Runs every (configuration, seed) pair and writes its artifacts.
fn execute(configs: &[ExperimentConfig], out: &Path, jobs: usize) -> Result<Vec<PathBuf>, CliError> {
    let tasks: Vec<(&ExperimentConfig, u64)> = configs
        .iter()
        .flat_map(|c| c.seeds().into_iter().map(move |s| (c, s)))
        .collect();
    let results: Vec<Result<PathBuf, CliError>> = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(cfg, seed)| {
                let dir = run_dir(out, cfg, seed);
                let result = run_experiment(cfg, seed)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.run_id(seed))))?;
                result
                    .write(&dir)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
                println!("{}", summary_line(&result.summary, &dir));
                Ok(dir)
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    let base = args.config.build()?;
    let configs = match &args.sweep {
        Some(kv) => Sweep::parse(&kv[0], &kv[1])?.expand(&base)?,
        None => vec![base],
    };
    let dirs = execute(&configs, &args.config.out_root(&configs[0]), args.jobs)?;
    println!("{} runs written", dirs.len());
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> Result<(), CliError> {
    let base = args.config.build()?;
    let mut configs = Vec::new();
    for v in &args.variants {
        let mut cfg = base.clone();
        if v != "none" {
            cfg.ablations = Ablations::default();
            cfg.ablations.set(v).map_err(|e| CliError::Usage(format!("--variants: {e}")))?;
        }
        cfg.run.name = format!("{}-{}", base.run.name, v.replace('-', "_"));
        configs.push(cfg);
    }
    let root = args.config.out_root(&base);
    let dirs = execute(&configs, &root, args.jobs)?;
    let runs = dirs.iter().map(|d| RunRecord::load(d)).collect::<Result<Vec<_>, _>>()?;
    let out = root.join("report");
    for p in write_report(&runs, &out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    let dirs = discover(&args.runs)?;
    if dirs.is_empty() {
        return Err(CliError::Usage("no run directories found".into()));
    }
    let runs = dirs.iter().map(|d| RunRecord::load(d)).collect::<Result<Vec<_>, _>>()?;
    for p in write_report(&runs, &args.out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// Files compared by `replay`, when present in the original run.
const REPLAYED: [&str; 6] = ["steps.csv", "evals.csv", "summary.json", "config.toml", "dataset.jsonl", "model.json"];

pub fn replay(args: &ReplayArgs) -> Result<(), CliError> {
    let dirs = discover(&args.runs)?;
    if dirs.is_empty() {
        return Err(CliError::Usage("no run directories found".into()));
    }
    let mut mismatched = Vec::new();
    for dir in dirs {
        let config_path = dir.join("config.toml");
        let cfg = ExperimentConfig::load(&config_path).map_err(|e| CliError::Config {
            path: config_path.display().to_string(),
            error: e,
        })?;
        let summary_path = dir.join("summary.json");
        let text = fs::read_to_string(&summary_path).map_err(|e| CliError::Schema {
            file: summary_path.display().to_string(),
            message: e.to_string(),
        })?;
        let summary: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Schema {
            file: summary_path.display().to_string(),
            message: e.to_string(),
        })?;
        let seed = summary["seed"].as_u64().ok_or_else(|| CliError::Schema {
            file: summary_path.display().to_string(),
            message: "missing `seed`".into(),
        })?;
        let result = run_experiment(&cfg, seed).map_err(|e| CliError::Runtime(e.to_string()))?;
        let tmp = tempfile::tempdir().map_err(|e| CliError::Runtime(e.to_string()))?;
        result.write(tmp.path()).map_err(|e| CliError::Runtime(e.to_string()))?;
        let differing: Vec<&str> = REPLAYED
            .iter()
            .copied()
            .filter(|name| dir.join(name).exists())
            .filter(|name| fs::read(dir.join(name)).ok() != fs::read(tmp.path().join(name)).ok())
            .collect();
        if differing.is_empty() {
            println!("{}: identical", dir.display());
        } else {
            println!("{}: differs in {}", dir.display(), differing.join(", "));
            mismatched.push(dir.display().to_string());
        }
    }
    if mismatched.is_empty() {
        Ok(())
    } else {
        Err(CliError::Mismatch(format!("{} run(s) did not reproduce: {}", mismatched.len(), mismatched.join(", "))))
    }
}

pub fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let cfg = args.config.build()?;
    if !(args.timeout.is_finite() && args.timeout >= 0.0) {
        return Err(CliError::Usage(format!("--timeout: expected seconds >= 0, got {}", args.timeout)));
    }
    let options = ServeOptions {
        fallback: args.fallback,
        timeout: Duration::from_secs_f64(args.timeout),
        metrics_every: args.metrics_every,
        buffer: args.buffer,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .map_err(|e| CliError::Usage(format!("cannot listen on {}:{}: {e}", args.host, args.port)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        let sessions: Vec<Arc<Session>> = cfg
            .seeds()
            .into_iter()
            .map(|seed| Session::new(cfg.run_id(seed), cfg.clone(), seed, options))
            .collect();
        let handles: Vec<_> = sessions.iter().map(|s| s.start()).collect();
        let state = AppState::new(cfg.clone(), options, sessions.clone());
        let app = router(state.clone());
        println!("listening on http://{addr}");
        for s in &sessions {
            println!("session {}", s.id());
        }
        let _ = std::io::stdout().flush();

        let out_root = args.config.out_root(&cfg);
        let finished = tokio::spawn(async move {
            let mut failures = 0;
            for (session, handle) in sessions.iter().zip(handles) {
                let joined = tokio::task::spawn_blocking(move || handle.join()).await;
                match joined {
                    Ok(Ok(Ok(result))) => {
                        let dir = run_dir(&out_root, session.config(), session.seed());
                        match result.write(&dir) {
                            Ok(()) => println!("{}", summary_line(&result.summary, &dir)),
                            Err(e) => {
                                log::error!("{}: {e}", dir.display());
                                failures += 1;
                            }
                        }
                    }
                    Ok(Ok(Err(e))) => {
                        log::error!("session {}: {e}", session.id());
                        failures += 1;
                    }
                    _ => {
                        log::error!("session {}: engine thread panicked", session.id());
                        failures += 1;
                    }
                }
                let _ = std::io::stdout().flush();
            }
            failures
        });

        let exit_when_done = args.exit_when_done;
        let shutdown_state = state.clone();
        let (failures_tx, failures_rx) = tokio::sync::oneshot::channel();
        let shutdown = async move {
            if exit_when_done {
                let failures = finished.await.unwrap_or(1);
                let _ = failures_tx.send(failures);
            } else {
                let _ = tokio::signal::ctrl_c().await;
                for s in shutdown_state.sessions() {
                    s.cancel();
                }
            }
            shutdown_state.shutdown();
        };
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown)
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        match failures_rx.await {
            Ok(0) | Err(_) => Ok(()),
            Ok(n) => Err(CliError::Runtime(format!("{n} session(s) failed"))),
        }
    })
}
