//! Command-line driver for bridge simulation experiments and diagnostics.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use diffbridge::coupling::CouplingConfig;

use crate::commands::Task;
use crate::config::{ExperimentConfig, ModelSpec};
use crate::output::Outputs;

#[derive(Debug, Parser)]
#[command(name = "diffbridge", version, about = "Diffusion bridge simulation and diagnostics")]
struct Cli {
    /// Base seed; every replicate uses its own stream of it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON experiment configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Number of bridges, or retained chain states.
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Coupling parameter in [-1, 1).
    #[arg(long, global = true, allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// Euler steps per bridge (per unit time for observation data).
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Endpoints {
    /// Start point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    start: Option<Vec<f64>>,
    /// End point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    end: Option<Vec<f64>>,
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Debug, Clone, Args)]
struct ChainArgs {
    /// Total iterations including burn-in (ignored when --replicates is set).
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Hit counts per estimate.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    max_trials: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw approximate bridges.
    SampleBridge {
        #[command(flatten)]
        ends: Endpoints,
    },
    /// Approximate bridges of an OU model compared with the exact bridge law.
    ValidateOu {
        #[command(flatten)]
        ends: Endpoints,
    },
    /// Pseudo-marginal Metropolis-Hastings chain of exact bridges.
    PmMh {
        #[command(flatten)]
        ends: Endpoints,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Alternative exact chain driven by hits of associated diffusions.
    AltMcmc {
        #[command(flatten)]
        ends: Endpoints,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Regression of the variance of hit-count estimates on 1/N.
    PiRegression {
        #[command(flatten)]
        ends: Endpoints,
        #[command(flatten)]
        chain: ChainArgs,
        /// Batch sizes N, comma separated.
        #[arg(long, value_delimiter = ',')]
        batches: Option<Vec<usize>>,
    },
    /// Gibbs estimation of the hyperbolic drift parameter from data.
    EstimateHyperbolic {
        /// CSV with header `t,x1,...,xd`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        prior_mean: Option<f64>,
        #[arg(long)]
        prior_variance: Option<f64>,
    },
    /// Simulate discrete observations of a diffusion.
    SimulateData {
        #[arg(long)]
        observations: Option<usize>,
        #[arg(long)]
        spacing: Option<f64>,
        /// Hyperbolic drift parameter (selects the hyperbolic model).
        #[arg(long)]
        alpha: Option<f64>,
        /// State dimension of the hyperbolic model.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        start: Option<Vec<f64>>,
    },
}

fn apply_ends(cfg: &mut ExperimentConfig, ends: &Endpoints) {
    cfg.start = ends.start.clone().or(cfg.start.take());
    cfg.end = ends.end.clone().or(cfg.end.take());
    cfg.horizon = ends.horizon.or(cfg.horizon);
}

fn apply_chain(cfg: &mut ExperimentConfig, c: &ChainArgs) {
    let spec = cfg.chain.get_or_insert_with(Default::default);
    spec.iterations = c.iterations.or(spec.iterations);
    spec.burn_in = c.burn_in.or(spec.burn_in);
    spec.thin = c.thin.or(spec.thin);
    spec.batch = c.batch.or(spec.batch);
    spec.max_trials = c.max_trials.or(spec.max_trials);
}

/// Resolves the task and the effective configuration.
fn resolve(cli: &Cli) -> Result<(Task, ExperimentConfig)> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.seed = cli.seed.or(cfg.seed);
    cfg.replicates = cli.replicates.or(cfg.replicates);
    cfg.steps = cli.steps.or(cfg.steps);
    if let Some(g) = cli.gamma {
        let correction = cfg.coupling.map(|c| c.orthogonal_correction()).unwrap_or(false);
        cfg.coupling = Some(CouplingConfig::new(g, correction)?);
    }
    let hyperbolic_default = |cfg: &mut ExperimentConfig| {
        if cfg.model.is_none() {
            cfg.model = Some(ModelSpec::Hyperbolic { alpha: 0.8, dim: 2 });
        }
    };
    let task = match &cli.command {
        Command::SampleBridge { ends } => {
            apply_ends(&mut cfg, ends);
            Task::SampleBridge
        }
        Command::ValidateOu { ends } => {
            apply_ends(&mut cfg, ends);
            Task::ValidateOu
        }
        Command::PmMh { ends, chain } => {
            apply_ends(&mut cfg, ends);
            apply_chain(&mut cfg, chain);
            Task::PmMh
        }
        Command::AltMcmc { ends, chain } => {
            apply_ends(&mut cfg, ends);
            apply_chain(&mut cfg, chain);
            Task::AltMcmc
        }
        Command::PiRegression { ends, chain, batches } => {
            apply_ends(&mut cfg, ends);
            apply_chain(&mut cfg, chain);
            cfg.batches = batches.clone().or(cfg.batches.take());
            Task::PiRegression
        }
        Command::EstimateHyperbolic { data, iterations, burn_in, prior_mean, prior_variance } => {
            let g = cfg.gibbs.get_or_insert_with(Default::default);
            g.iterations = iterations.or(g.iterations);
            g.burn_in = burn_in.or(g.burn_in);
            g.prior_mean = prior_mean.or(g.prior_mean);
            g.prior_variance = prior_variance.or(g.prior_variance);
            Task::EstimateHyperbolic { data: data.clone() }
        }
        Command::SimulateData { observations, spacing, alpha, dim, start } => {
            if alpha.is_some() || dim.is_some() {
                cfg.model = Some(ModelSpec::Hyperbolic { alpha: alpha.unwrap_or(0.8), dim: dim.unwrap_or(2) });
            }
            hyperbolic_default(&mut cfg);
            let s = cfg.simulation.get_or_insert_with(Default::default);
            s.observations = observations.or(s.observations);
            s.spacing = spacing.or(s.spacing);
            s.start = start.clone().or(s.start.take());
            Task::SimulateData
        }
    };
    Ok((task, cfg))
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let (task, cfg) = resolve(cli)?;
    let mut out = Outputs::new(&cli.out)?;
    match commands::run(&task, &cfg, &mut out) {
        Ok(()) => {
            for p in out.written() {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Err(e) => {
            out.cleanup();
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
