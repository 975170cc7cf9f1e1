mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};
use config::{Overrides, RunConfig};
use std::path::PathBuf;

/// Fairness-aware outcome prediction on event logs.
#[derive(Debug, Parser)]
#[command(name = "fairppm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Weight of the distribution-matching penalty, in [0, 1].
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Remove the sensitive attribute from the model input.
    #[arg(long, global = true)]
    drop_sensitive: bool,
    /// Maximum prefix length.
    #[arg(long, global = true)]
    max_len: Option<usize>,
    /// Worker threads for grid and sweep runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    sinkhorn_eps: Option<f64>,
    #[arg(long, global = true)]
    sinkhorn_iters: Option<usize>,
    /// Artifact directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Event log CSV (for `ingest`).
    #[arg(long, global = true)]
    log: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split, encode and summarise an event log.
    Ingest,
    /// Train one classifier.
    Train,
    /// Train over a range of lambdas and mark the Pareto fronts.
    Sweep,
    /// Score the test split with a trained checkpoint.
    Evaluate,
    /// Merge evaluation reports of several runs.
    Report,
    /// Generate a synthetic biased hiring log.
    Synth,
}

fn run(cli: Cli) -> error::Result<()> {
    let ov = Overrides {
        log: cli.log,
        out: cli.out,
        seed: cli.seed,
        lambda: cli.lambda,
        drop_sensitive: cli.drop_sensitive,
        max_len: cli.max_len,
        jobs: cli.jobs,
        sinkhorn_eps: cli.sinkhorn_eps,
        sinkhorn_iters: cli.sinkhorn_iters,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &ov)?;
    let ctx = commands::Ctx::new(cfg)?;
    match cli.command {
        Command::Ingest => commands::ingest(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Sweep => commands::sweep(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Report => commands::report(&ctx),
        Command::Synth => commands::synth(&ctx),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
