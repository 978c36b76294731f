use std::process::ExitCode;

use askdagger_cli::commands::{self, AblateArgs, ReplayArgs, ReportArgs, RunArgs, ServeArgs};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "askd", version, about = "Uncertainty-gated interactive imitation learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration (or a sweep) over one or more seeds.
    Run(RunArgs),
    /// Run the full method and each ablation, then aggregate.
    Ablate(AblateArgs),
    /// Aggregate run directories into CSV tables.
    Report(ReportArgs),
    /// Re-run logged runs and check the artifacts reproduce byte for byte.
    Replay(ReplayArgs),
    /// Serve live sessions answered by a remote teacher.
    Serve(ServeArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => commands::run(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Report(a) => commands::report(a),
        Command::Replay(a) => commands::replay(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
