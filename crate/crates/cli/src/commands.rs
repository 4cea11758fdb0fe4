use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use diffbridge::bridge::{ApproximateBridge, BridgeSampler, BridgeSpec};
use diffbridge::diagnostics::{dkw_bound, MarginalDiagnostics};
use diffbridge::exact::{
    alt_mcmc_stream, mean_and_variance, pi_variance_regression, pm_mh_stream, BridgeKernel, ChainConfig,
    ChainRecord, VarianceRegression, DEFAULT_MAX_TRIALS,
};
use diffbridge::inference::{gibbs_run, simulate_observations_with, GibbsConfig, ObservationSet};
use diffbridge::models::OrnsteinUhlenbeck;
use diffbridge::reversal::ReversedModel;
use diffbridge::rng::replicate_rng;
use diffbridge::State;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{to_state, AnyModel, ExperimentConfig};
use crate::output::Outputs;

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    SampleBridge,
    ValidateOu,
    PmMh,
    AltMcmc,
    PiRegression,
    EstimateHyperbolic { data: PathBuf },
    SimulateData,
}

/// Stream offset for oracle baselines, so they never share a stream with
/// the sampler replicates.
const BASELINE_STREAM: u64 = 1 << 62;

pub fn run(task: &Task, cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    cfg.validate()?;
    let d = match task {
        Task::EstimateHyperbolic { data } => data_dim(data)?,
        _ => cfg.model().dim()?,
    };
    match d {
        1 => run_dim::<1>(task, cfg, out),
        2 => run_dim::<2>(task, cfg, out),
        3 => run_dim::<3>(task, cfg, out),
        4 => run_dim::<4>(task, cfg, out),
        _ => bail!("state dimension {d} is not supported (1 to 4)"),
    }
}

fn run_dim<const D: usize>(task: &Task, cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    match task {
        Task::SampleBridge => sample_bridge::<D>(cfg, out),
        Task::ValidateOu => validate_ou::<D>(cfg, out),
        Task::PmMh => exact_chain::<D>(cfg, out, false),
        Task::AltMcmc => exact_chain::<D>(cfg, out, true),
        Task::PiRegression => pi_regression::<D>(cfg, out),
        Task::EstimateHyperbolic { data } => estimate_hyperbolic::<D>(cfg, data, out),
        Task::SimulateData => simulate_data::<D>(cfg, out),
    }
}

fn seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seed.unwrap_or(1)
}

fn data_dim(path: &Path) -> Result<usize> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut header = String::new();
    BufReader::new(file).read_line(&mut header)?;
    let columns = header.trim().split(',').count();
    ensure!(columns >= 2, "{} needs a header `t,x1,...,xd`", path.display());
    Ok(columns - 1)
}

type Sampler<const D: usize> = BridgeSampler<AnyModel<D>, ReversedModel<AnyModel<D>>>;

fn bridge_setup<const D: usize>(cfg: &ExperimentConfig) -> Result<(AnyModel<D>, Sampler<D>, BridgeSpec<D>)> {
    let model = cfg.model().build::<D>()?;
    let reversed = ReversedModel::new::<D>(model.clone())?;
    let mut sampler = BridgeSampler::new(model.clone(), reversed, cfg.coupling(), cfg.criterion())?;
    if let Some(m) = cfg.max_attempts {
        sampler = sampler.with_max_attempts(m)?;
    }
    let point = |v: &Option<Vec<f64>>, what| -> Result<State<D>> {
        v.as_deref().map(|v| to_state::<D>(v, what)).transpose().map(|s| s.unwrap_or_else(State::zeros))
    };
    let spec = BridgeSpec::new(point(&cfg.start, "start")?, point(&cfg.end, "end")?, cfg.horizon(), cfg.steps())?;
    Ok((model, sampler, spec))
}

fn coordinate_header(prefix: &str, d: usize) -> String {
    (1..=d).map(|k| format!(",{prefix}{k}")).collect()
}

fn coordinates<const D: usize>(x: &State<D>) -> String {
    x.iter().map(|v| format!(",{v:.16e}")).collect()
}

fn draw_bridges<const D: usize>(
    sampler: &Sampler<D>,
    spec: &BridgeSpec<D>,
    n: usize,
    seed: u64,
) -> Result<Vec<ApproximateBridge<D>>> {
    Ok((0..n)
        .into_par_iter()
        .map(|i| sampler.sample(spec, &mut replicate_rng(seed, i as u64)))
        .collect::<diffbridge::Result<Vec<_>>>()?)
}

fn sample_bridge<const D: usize>(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let (_, sampler, spec) = bridge_setup::<D>(cfg)?;
    let n = cfg.replicates.unwrap_or(1_000);
    let bridges = draw_bridges(&sampler, &spec, n, seed(cfg))?;
    let mut w = out.create("bridges.csv")?;
    writeln!(w, "replicate,t{}", coordinate_header("x", D))?;
    for (r, b) in bridges.iter().enumerate() {
        for (i, x) in b.path().states().iter().enumerate() {
            writeln!(w, "{r},{:.16e}{}", spec.grid().time(i), coordinates(x))?;
        }
    }
    w.flush()?;
    let attempts = bridges.iter().map(|b| b.attempts() as f64).sum::<f64>() / n as f64;
    let index = bridges.iter().map(|b| b.coupling_index() as f64).sum::<f64>() / n as f64;
    out.json(
        "summary.json",
        &json!({
            "replicates": n,
            "gamma": sampler.coupling().gamma(),
            "steps": spec.grid().steps(),
            "mean_attempts": attempts,
            "mean_coupling_index": index,
        }),
    )
}

#[derive(Serialize)]
struct DiagnosticsSummary {
    time: f64,
    samples: usize,
    baseline_samples: usize,
    exact_mean: Vec<f64>,
    exact_sd: Vec<f64>,
    ks: Vec<f64>,
    mean_ks: f64,
    copula_distance: Option<f64>,
    dkw_bound_95: f64,
}

/// Q-Q, KS and copula comparison of midpoint samples with the exact OU
/// bridge law at the same time.
fn ou_diagnostics<const D: usize>(
    ou: &OrnsteinUhlenbeck<D>,
    spec: &BridgeSpec<D>,
    mids: &[State<D>],
    cfg: &ExperimentConfig,
    out: &mut Outputs,
) -> Result<DiagnosticsSummary> {
    ensure!(!mids.is_empty(), "no samples to compare");
    let grid = spec.grid();
    let k = grid.steps() / 2;
    let t = grid.time(k);
    let (mean, cov) = ou.bridge_marginal(spec.start(), spec.end(), t, grid.horizon())?;
    let exact = ou.exact_bridge(grid)?;
    let baseline_n = 10 * mids.len();
    let s = seed(cfg);
    let baseline: Vec<Vec<f64>> = (0..baseline_n)
        .into_par_iter()
        .map(|i| {
            let path = exact.sample(spec.start(), spec.end(), &mut replicate_rng(s, BASELINE_STREAM + i as u64));
            path.state(k).iter().copied().collect()
        })
        .collect();
    let samples: Vec<Vec<f64>> = mids.iter().map(|x| x.iter().copied().collect()).collect();
    let means: Vec<f64> = mean.iter().copied().collect();
    let sds: Vec<f64> = (0..D).map(|j| cov[(j, j)].sqrt()).collect();
    let lattice = cfg.lattice.unwrap_or(20);
    let diag =
        MarginalDiagnostics::gaussian(&samples, &baseline, &means, &sds, cfg.qq_points.unwrap_or(99), lattice);
    for (j, qq) in diag.qq.iter().enumerate() {
        let mut w = out.create(&format!("qq_x{}.csv", j + 1))?;
        writeln!(w, "p,empirical,exact")?;
        for q in qq {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", q.p, q.empirical, q.exact)?;
        }
        w.flush()?;
    }
    if D >= 2 {
        let mut w = out.create("copula.csv")?;
        writeln!(w, "u,v,empirical,exact")?;
        for i in 0..lattice {
            for j in 0..lattice {
                let (u, v) = ((i + 1) as f64 / lattice as f64, (j + 1) as f64 / lattice as f64);
                writeln!(w, "{u},{v},{:.16e},{:.16e}", diag.copula[i][j], diag.copula_exact[i][j])?;
            }
        }
        w.flush()?;
    }
    let summary = DiagnosticsSummary {
        time: t,
        samples: mids.len(),
        baseline_samples: baseline_n,
        exact_mean: means,
        exact_sd: sds,
        mean_ks: diag.mean_ks(),
        ks: diag.ks,
        copula_distance: (D >= 2).then_some(diag.copula_distance),
        dkw_bound_95: dkw_bound(mids.len(), 0.05),
    };
    out.json("diagnostics.json", &summary)?;
    Ok(summary)
}

fn validate_ou<const D: usize>(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let (model, sampler, spec) = bridge_setup::<D>(cfg)?;
    let AnyModel::Ou(ou) = &model else {
        bail!("validate-ou needs an Ornstein-Uhlenbeck model");
    };
    let n = cfg.replicates.unwrap_or(20_000);
    let k = spec.grid().steps() / 2;
    let mids: Vec<State<D>> = draw_bridges(&sampler, &spec, n, seed(cfg))?.iter().map(|b| *b.path().state(k)).collect();
    let mut w = out.create("midpoints.csv")?;
    writeln!(w, "replicate{}", coordinate_header("x", D))?;
    for (r, x) in mids.iter().enumerate() {
        writeln!(w, "{r}{}", coordinates(x))?;
    }
    w.flush()?;
    let summary = ou_diagnostics(ou, &spec, &mids, cfg, out)?;
    println!("KS per coordinate {:?}, copula distance {:?}", summary.ks, summary.copula_distance);
    Ok(())
}

fn chain_config(cfg: &ExperimentConfig, default_retained: usize, default_burn_in: usize) -> Result<ChainConfig> {
    let spec = cfg.chain.clone().unwrap_or_default();
    let burn_in = spec.burn_in.unwrap_or(default_burn_in);
    let thin = spec.thin.unwrap_or(1);
    ensure!(thin >= 1, "thin must be at least 1");
    let iterations = match (cfg.replicates, spec.iterations) {
        (Some(r), _) => burn_in + r * thin,
        (None, Some(it)) => it,
        (None, None) => burn_in + default_retained * thin,
    };
    Ok(ChainConfig::new(iterations)
        .burn_in(burn_in)
        .thin(thin)
        .batch(spec.batch.unwrap_or(1))
        .max_trials(spec.max_trials.unwrap_or(DEFAULT_MAX_TRIALS)))
}

fn exact_chain<const D: usize>(cfg: &ExperimentConfig, out: &mut Outputs, alt: bool) -> Result<()> {
    let (model, sampler, spec) = bridge_setup::<D>(cfg)?;
    let chain = chain_config(cfg, 10_000, 1_000)?;
    let kernel = BridgeKernel::new(sampler, spec);
    let k = spec.grid().steps() / 2;
    let mut mids = Vec::new();
    let mut w = out.create("chain.csv")?;
    writeln!(w, "iteration,accepted,rho_hat{}", coordinate_header("m", D))?;
    let sink = |r: ChainRecord<&ApproximateBridge<D>>| {
        let mid = *r.state.path().state(k);
        let rho = r.rho_hat.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{rho}{}", r.iteration, r.accepted, coordinates(&mid))?;
        mids.push(mid);
        Ok(())
    };
    let mut rng = replicate_rng(seed(cfg), 0);
    let summary = if alt {
        alt_mcmc_stream(&kernel, &chain, &mut rng, sink)?
    } else {
        pm_mh_stream(&kernel, &chain, &mut rng, sink)?
    };
    w.flush()?;
    drop(w);
    out.json(
        "summary.json",
        &json!({
            "sampler": if alt { "alt-mcmc" } else { "pm-mh" },
            "iterations": summary.iterations,
            "burn_in": chain.burn_in,
            "thin": chain.thin,
            "batch": chain.batch,
            "retained": summary.retained,
            "accepted": summary.accepted,
            "acceptance_rate": summary.acceptance_rate(),
        }),
    )?;
    if let AnyModel::Ou(ou) = &model {
        ou_diagnostics(ou, &spec, &mids, cfg, out)?;
    }
    Ok(())
}

fn pi_regression<const D: usize>(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let (_, sampler, spec) = bridge_setup::<D>(cfg)?;
    let batches = cfg.batches.clone().unwrap_or_else(|| vec![50, 100, 150, 200, 300]);
    let kernel = BridgeKernel::new(sampler, spec);
    let base = chain_config(cfg, 3_000, 100)?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut w = out.create("rho.csv")?;
    writeln!(w, "batch,iteration,rho_hat")?;
    for (k, &batch) in batches.iter().enumerate() {
        let chain = base.batch(batch);
        let mut rho = Vec::new();
        let summary = pm_mh_stream(&kernel, &chain, &mut replicate_rng(seed(cfg), k as u64), |r| {
            let v = r.rho_hat.expect("pseudo-marginal estimate");
            writeln!(w, "{batch},{},{v}", r.iteration)?;
            rho.push(v);
            Ok(())
        })?;
        let (mean, variance) = mean_and_variance(&rho);
        points.push((batch, variance));
        rows.push(json!({
            "batch": batch,
            "mean": mean,
            "variance": variance,
            "acceptance_rate": summary.acceptance_rate(),
        }));
    }
    w.flush()?;
    drop(w);
    let fit = pi_variance_regression(&points)?;
    let grand_mean = rows.iter().map(|r| r["mean"].as_f64().unwrap_or(f64::NAN)).sum::<f64>() / rows.len() as f64;
    let pi = 1.0 / grand_mean;
    out.json(
        "regression.json",
        &json!({
            "points": rows,
            "intercept": fit.intercept,
            "intercept_se": fit.intercept_se,
            "slope": fit.slope,
            "slope_se": fit.slope_se,
            "pi_hat": pi,
            "implied_slope": VarianceRegression::slope_for_constant_pi(pi),
        }),
    )?;
    println!("intercept {:.4} (SE {:.4}), slope {:.2}, pi {:.4}", fit.intercept, fit.intercept_se, fit.slope, pi);
    Ok(())
}

fn estimate_hyperbolic<const D: usize>(cfg: &ExperimentConfig, data: &Path, out: &mut Outputs) -> Result<()> {
    let file = File::open(data).with_context(|| format!("opening {}", data.display()))?;
    let obs = ObservationSet::<D>::read_csv(BufReader::new(file)).with_context(|| format!("reading {}", data.display()))?;
    let spec = cfg.gibbs.clone().unwrap_or_default();
    let mut gibbs = GibbsConfig::new(
        spec.prior_mean.unwrap_or(1.0),
        spec.prior_variance.unwrap_or(1.0),
        spec.iterations.unwrap_or(5_000),
    );
    gibbs.burn_in = spec.burn_in.unwrap_or(gibbs.iterations / 10);
    gibbs.coupling = cfg.coupling();
    gibbs.criterion = cfg.criterion;
    gibbs.steps_per_unit = spec.steps_per_unit.or(cfg.steps).unwrap_or(50);
    if let Some(m) = cfg.max_attempts {
        gibbs.max_attempts = m;
    }
    if let Some(r) = spec.retries {
        gibbs.retries = r;
    }
    if let Some(mode) = spec.imputation {
        gibbs.mode = mode;
    }
    let result = gibbs_run(&obs, &gibbs, &mut replicate_rng(seed(cfg), 0))?;
    let mut w = out.create("chain.csv")?;
    writeln!(w, "iteration,alpha")?;
    for (i, a) in result.alphas.iter().enumerate() {
        writeln!(w, "{},{a:.16e}", gibbs.burn_in + i + 1)?;
    }
    w.flush()?;
    drop(w);
    let mean = result.posterior_mean();
    let (lo, hi) = result.credible_interval(0.95);
    out.json(
        "summary.json",
        &json!({
            "posterior_mean": mean,
            "credible_interval_95": [lo, hi],
            "acceptance_diagnostics": { "mean_bridge_attempts": result.mean_attempts },
            "observations": obs.len(),
            "iterations": gibbs.iterations,
            "burn_in": gibbs.burn_in,
        }),
    )?;
    println!("posterior mean {mean:.4}, 95% interval [{lo:.4}, {hi:.4}]");
    Ok(())
}

fn simulate_data<const D: usize>(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let model = cfg.model().build::<D>()?;
    let sim = cfg.simulation.clone().unwrap_or_default();
    let n = sim.observations.unwrap_or(1_000);
    ensure!(n >= 1, "need at least one observation");
    let spacing = sim.spacing.unwrap_or(1.0);
    ensure!(spacing > 0.0 && spacing.is_finite(), "spacing must be positive");
    let start = sim.start.as_deref().map(|v| to_state::<D>(v, "start")).transpose()?.unwrap_or_else(State::zeros);
    let times: Vec<f64> = (0..n).map(|k| k as f64 * spacing).collect();
    let steps_per_unit = sim.steps_per_unit.or(cfg.steps).unwrap_or(50);
    let obs = simulate_observations_with(&model, start, &times, steps_per_unit, &mut replicate_rng(seed(cfg), 0))?;
    let mut w = out.create("data.csv")?;
    obs.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}
