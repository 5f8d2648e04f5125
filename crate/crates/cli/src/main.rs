//! `quadsel`: run selections, experiments and verification suites from JSON configs.
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use quadsel::select::SelectionMethod;
use quadsel::{Criterion, ErrorClass};

#[derive(Parser, Debug)]
#[command(name = "quadsel", version, about = "Greedy selection of noisy quadratic observations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config for the subcommand; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (affects wall time only).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Select k observations of a problem file.
    Select {
        #[arg(long)]
        problem: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        criterion: Option<Criterion>,
        #[arg(long)]
        method: Option<SelectionMethod>,
    },
    /// Run a verification suite; exits with 4 if an invariant fails.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Phase-retrieval NRMSE experiment.
    Phase,
    /// Multi-target tracking experiment.
    Track,
    /// Brute-force weak-submodularity constants against their bounds over an SNR sweep.
    Wsc,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Bound,
    Wsc,
    Prop,
    Guarantee,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Numeric => 3,
        ErrorClass::Theorem => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
