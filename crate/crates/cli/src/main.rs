mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Annealed-discount policy-gradient experiments on exact tabular MDPs.
#[derive(Parser, Debug)]
#[command(name = "annealpg", version)]
struct Cli {
    /// Experiment config (JSON). May also be given positionally.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent runs, checks and rollouts.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate an MDP JSON file and check absorption.
    Validate { mdp: PathBuf },
    /// Run the verification suite and write checks.json.
    Verify {
        #[arg(value_name = "CONFIG")]
        path: Option<PathBuf>,
    },
    /// Run every configured training run (and verification, if configured).
    Train {
        #[arg(value_name = "CONFIG")]
        path: Option<PathBuf>,
    },
    /// Roll out episodes and optionally audit the estimator.
    Sample {
        #[arg(value_name = "CONFIG")]
        path: Option<PathBuf>,
    },
    /// Summarize a trace CSV.
    Report { trace: PathBuf },
}

/// How a command ended, mapped onto the process exit code.
pub enum Failure {
    /// Bad flags or config: exit 2.
    Usage(anyhow::Error),
    /// A run or check did not succeed: exit 1.
    Check(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Check(e.into())
    }
}

pub struct Options {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --workers: {e}");
            return ExitCode::from(2);
        }
    }
    let opts = Options {
        out: cli.out,
        seed: cli.seed,
        quiet: cli.quiet,
    };
    let config = |positional: Option<PathBuf>| {
        positional
            .or(cli.config.clone())
            .ok_or_else(|| Failure::Usage(anyhow::anyhow!("a config file is required (positional or --config)")))
    };
    let result = match cli.command {
        Command::Validate { mdp } => commands::validate(&mdp, &opts),
        Command::Verify { path: c } => config(c).and_then(|c| commands::verify(&c, &opts)),
        Command::Train { path: c } => config(c).and_then(|c| commands::train(&c, &opts)),
        Command::Sample { path: c } => config(c).and_then(|c| commands::sample(&c, &opts)),
        Command::Report { trace } => commands::report(&trace, &opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Check(e)) => {
            eprintln!("failure: {e:#}");
            ExitCode::from(1)
        }
    }
}
