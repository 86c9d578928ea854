mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use amod_core::config::{extract_overrides, ConfigError};

#[derive(Parser)]
#[command(name = "amod", version, about = "Grid-city rebalancing with graph actor-critic policies")]
#[command(after_help = "Any config field can be overridden with `--section.key value`, e.g. `--train.lr 0.01`.\n\
    Fields of the scenario file use the `scenario.` prefix, e.g. `--scenario.fleet_size 8`.")]
struct Cli {
    /// Worker threads for parallel rollouts and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy per seed and write checkpoints and training logs.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a baseline and write a results CSV.
    Eval(EvalArgs),
    /// Zero-shot granularity sweep of a checkpoint, or train-and-compare all backbones.
    Sweep(SweepArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to `output_dir`, then `$AMOD_OUT_DIR`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single seed, replacing the seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Backbone: gcn, gat, prognn or ptdnet.
    #[arg(long)]
    backbone: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Training episodes.
    #[arg(long)]
    episodes: Option<u64>,
    /// Continue from a checkpoint (single seed only).
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_nan_at: Option<u64>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `train`.
    #[arg(long, required_unless_present = "baseline")]
    checkpoint: Option<PathBuf>,
    /// Evaluate a baseline instead of a checkpoint.
    #[arg(long)]
    baseline: Option<String>,
    /// Evaluation episodes per seed.
    #[arg(long)]
    episodes: Option<u64>,
    /// Grid granularity; defaults to the scenario's.
    #[arg(long)]
    k: Option<usize>,
    /// Sample actions instead of using the Dirichlet mean.
    #[arg(long)]
    stochastic: bool,
    /// Add deviation from the exhaustive oracle (tiny scenarios only).
    #[arg(long)]
    oracle: bool,
    /// Also evaluate every baseline.
    #[arg(long)]
    with_baselines: bool,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to sweep; without it every listed backbone is trained first.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Granularities, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Backbones to train and compare, comma separated.
    #[arg(long, value_delimiter = ',')]
    backbones: Option<Vec<String>>,
    /// Training episodes per backbone and seed.
    #[arg(long)]
    episodes: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Scope {
    Ops,
    Backbones,
    Policy,
    All,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(value_enum, default_value_t = Scope::All)]
    scope: Scope,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Numeric(anyhow::Error),
    Checks(usize),
    Other(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = match extract_overrides(std::env::args()) {
        Ok(split) => split,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.workers.max(1)).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Train(a) => commands::train(a, overrides),
        Command::Eval(a) => commands::eval(a, overrides),
        Command::Sweep(a) => commands::sweep(a, overrides),
        Command::Gradcheck(a) => commands::gradcheck(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(e)) => {
            eprintln!("numeric abort: {e:#}");
            ExitCode::from(3)
        }
        Err(Failure::Checks(n)) => {
            eprintln!("{n} gradient check(s) failed");
            ExitCode::from(1)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
