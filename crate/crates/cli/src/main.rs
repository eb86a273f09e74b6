//! Command-line driver: run the pipeline on a sequence, evaluate
//! trajectories, or render synthetic scenes.

mod eval;
mod run;
mod synth_cmd;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit codes: 0 success, 2 usage/settings/script problems, 3 data
/// problems, 4 tracking lost.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    TrackingLost(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::TrackingLost(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::TrackingLost(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "dynovo",
    about = "Stereo visual odometry and occupancy mapping for dynamic scenes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a recorded sequence, writing trajectory, map and diagnostics.
    Run(run::RunArgs),
    /// Compare an estimated trajectory against a reference (APE).
    Eval(eval::EvalArgs),
    /// Render a synthetic stereo sequence from a scene script.
    Synth(synth_cmd::SynthArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run::cmd_run(&args),
        Command::Eval(args) => eval::cmd_eval(&args),
        Command::Synth(args) => synth_cmd::cmd_synth(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
