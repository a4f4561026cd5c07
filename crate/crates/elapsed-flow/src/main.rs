//! Command-line entry point: `elapsed-flow <command> --config <file>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use elapsed_flow::commands::{cmd_certify, cmd_equilibrium, cmd_simulate, cmd_sweep};
use elapsed_flow::config::RunConfig;
use elapsed_flow::{Error, Result};

#[derive(Parser)]
#[command(
    name = "elapsed-flow",
    version,
    about = "Structured neuron-population models on elapsed-time grids: \
             simulation, stationary states, and quantitative ergodicity \
             certificates."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a model forward and record its trajectory.
    Simulate(RunArgs),
    /// Compute the stationary state and its quality metrics.
    Equilibrium(RunArgs),
    /// Certify the minorization, contraction, and relaxation bounds.
    Certify(RunArgs),
    /// Sweep the feedback strength and measure relaxation at each point.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's output_dir; default ".").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides the ELAPSED_FLOW_THREADS variable;
    /// default: one per core).
    #[arg(long)]
    threads: Option<usize>,
}

/// Thread-count policy: the `--threads` flag wins, then the
/// `ELAPSED_FLOW_THREADS` variable, then rayon's default.
fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("ELAPSED_FLOW_THREADS") {
        Ok(text) => {
            let n: usize = text.trim().parse().map_err(|_| {
                Error::Config(format!(
                    "ELAPSED_FLOW_THREADS must be a positive integer, got '{text}'"
                ))
            })?;
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn run(args: &RunArgs, command: impl Fn(&RunConfig, &Path) -> Result<()>) -> Result<()> {
    if let Some(n) = thread_count(args.threads)? {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".to_string()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))?;
    }
    let cfg = RunConfig::load(&args.config)?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    command(&cfg, &out_dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => run(args, cmd_simulate),
        Command::Equilibrium(args) => run(args, cmd_equilibrium),
        Command::Certify(args) => run(args, cmd_certify),
        Command::Sweep(args) => run(args, cmd_sweep),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
