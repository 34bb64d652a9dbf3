//! `ergl`: simulate orbits, train surrogates, score their statistics and audit
//! them for shadowing. Every command reads an optional config file, applies
//! flag overrides and writes its outputs plus a `manifest.json` into one
//! directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "ergl", version, about = "Learn chaotic maps and audit their ergodic statistics")]
pub struct Cli {
    /// TOML or JSON run config (a previous `manifest.json` also works).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "ERGL_OUT_DIR", default_value = "ergl-out")]
    pub out_dir: PathBuf,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run single-threaded so that every reduction happens in a fixed order.
    #[arg(long, global = true)]
    pub reproducible: bool,
    /// Master seed (overrides every seed in the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SystemArgs {
    /// One of tent_tilted, tent_pinched, tent_plucked, baker, lorenz63, rossler, hyperchaos, ks.
    #[arg(long)]
    pub system: Option<String>,
    /// Shorthand for `--param s=<value>`.
    #[arg(long)]
    pub s: Option<f64>,
    /// System parameter override `key=value` (repeatable).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Time step for flows.
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossKind {
    Mse,
    Jac,
    Unrolled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Gelu,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Total steps, split 10:8 into train and test.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub spinup: Option<usize>,
    /// Initial state as comma-separated values.
    #[arg(long, value_delimiter = ',')]
    pub x0: Option<Vec<f64>>,
    /// Skip storing Jacobians.
    #[arg(long)]
    pub no_jacobians: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Directory written by `simulate`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub loss: Option<LossKind>,
    /// Jacobian-loss weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Unrolled-loss horizon.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size; 0 means full batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `truth`, a checkpoint path or `label=path` (repeatable).
    #[arg(long = "model", alias = "checkpoint")]
    pub models: Vec<String>,
    #[arg(long)]
    pub le_steps: Option<usize>,
    #[arg(long)]
    pub le_ensemble: Option<usize>,
    /// Averaging window in time units.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub w1_stride: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ShadowArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `truth` or a checkpoint path.
    #[arg(long = "model", alias = "checkpoint")]
    pub model: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Uniform noise on truth pseudo-orbits.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directories (each, or each of its subdirectories, holding a manifest).
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a ground-truth orbit and the train/test datasets cut from it.
    Simulate(SimulateArgs),
    /// Train a model on a simulated dataset.
    Train(TrainArgs),
    /// Compare models against the truth: W1, Lyapunov spectra, means, histograms.
    Evaluate(EvaluateArgs),
    /// Measure model defects, refine a shadowing orbit and classify its typicality.
    Shadow(ShadowArgs),
    /// Merge the manifests of several runs into one summary table.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Shadow(_) => "shadow",
            Command::Report(_) => "report",
        }
    }
}

/// Global settings shared by every command.
pub struct Context {
    pub command: &'static str,
    pub out_dir: PathBuf,
    pub reproducible: bool,
    pub threads: Option<usize>,
    pub config: RunConfig,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let threads = if cli.reproducible { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        // a pool may already exist when called repeatedly in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    let ctx = Context {
        command: cli.command.name(),
        out_dir: cli.out_dir,
        reproducible: cli.reproducible,
        threads,
        config: config.seeded(),
    };
    match cli.command {
        Command::Simulate(args) => commands::simulate(ctx, args),
        Command::Train(args) => commands::train(ctx, args),
        Command::Evaluate(args) => commands::evaluate(ctx, args),
        Command::Shadow(args) => commands::shadow(ctx, args),
        Command::Report(args) => commands::report(ctx, args),
    }
}
