//! Bayesian estimation of the hyperbolic drift parameter by Gibbs sampling
//! with bridge imputation between observations.
//!
//! Given a continuously observed path on `[0, t]`, the log-likelihood of
//! `alpha` is `alpha H_t - alpha^2 B_t / 2`, so a normal prior is conjugate.
//! The sampler alternates between imputing the path between observations
//! given `alpha` and drawing `alpha` from the resulting normal posterior.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::bridge::{BridgeSampler, BridgeSpec, CrossingCriterion, DEFAULT_MAX_ATTEMPTS};
use crate::coupling::CouplingConfig;
use crate::error::{Error, Result};
use crate::exact::{pm_mh_stream, BridgeKernel, ChainConfig, DEFAULT_MAX_TRIALS};
use crate::models::HyperbolicModel;
use crate::rng::{child_seed, replicate_rng, SimRng};
use crate::sde::{read_csv_states, simulate_path, Diffusion, SamplePath, State, TimeGrid};

/// Discrete observations `(t_k, x_k)` with strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet<const D: usize> {
    times: Vec<f64>,
    values: Vec<State<D>>,
}

impl<const D: usize> ObservationSet<D> {
    pub fn new(times: Vec<f64>, values: Vec<State<D>>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("observation set is empty"));
        }
        if times.len() != values.len() {
            return Err(Error::invalid(format!("{} times but {} states", times.len(), values.len())));
        }
        if times.iter().any(|t| !t.is_finite()) || values.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("observations must be finite"));
        }
        if let Some(k) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!("times not strictly increasing at row {}", k + 1)));
        }
        Ok(Self { times, values })
    }

    /// Parses `t,x1,...,xd` rows with a header line.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let (times, values) = read_csv_states::<D, R>(input)?;
        Self::new(times, values)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=D).map(|k| format!("x{k}"))).collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, x) in self.times.iter().zip(&self.values) {
            let row: Vec<String> = std::iter::once(*t).chain(x.iter().copied()).map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[State<D>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    /// Bridge specification for interval `k` (between observations `k` and
    /// `k + 1`), with `steps_per_unit` Euler steps per unit time and at least
    /// two steps.
    pub fn interval_spec(&self, k: usize, steps_per_unit: usize) -> Result<BridgeSpec<D>> {
        let length = self.times[k + 1] - self.times[k];
        let steps = ((length * steps_per_unit as f64).round() as usize).max(2);
        BridgeSpec::new(self.values[k], self.values[k + 1], length, steps)
    }
}

/// `H` and `B` functionals of a path: the log-likelihood of `alpha` is
/// `alpha h - alpha^2 b_stat / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SufficientStats {
    pub h: f64,
    pub b_stat: f64,
}

impl std::ops::Add for SufficientStats {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { h: self.h + o.h, b_stat: self.b_stat + o.b_stat }
    }
}

impl std::iter::Sum for SufficientStats {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// Functionals of one path segment: endpoint terms exactly, integrals by the
/// trapezoid rule. Segments sharing endpoints can be summed.
pub fn path_functionals<const D: usize>(path: &SamplePath<D>) -> SufficientStats {
    let d = D as f64;
    let delta = path.grid().step_size();
    let phi = |x: &State<D>| (1.0 + x.norm_squared()).sqrt();
    // half the Laplacian of phi, and |grad phi|^2
    let half_laplacian = |x: &State<D>| {
        let r2 = x.norm_squared();
        (d + (d - 1.0) * r2) / (2.0 * (1.0 + r2).powf(1.5))
    };
    let grad_sq = |x: &State<D>| {
        let r2 = x.norm_squared();
        r2 / (1.0 + r2)
    };
    let trapezoid = |f: &dyn Fn(&State<D>) -> f64| {
        let s = path.states();
        let inner: f64 = s[1..s.len() - 1].iter().map(f).sum();
        delta * (inner + 0.5 * (f(&s[0]) + f(&s[s.len() - 1])))
    };
    SufficientStats {
        h: phi(path.first()) - phi(path.last()) + trapezoid(&half_laplacian),
        b_stat: trapezoid(&grad_sq),
    }
}

/// Normal posterior `(mean, variance)` of `alpha` under a `N(prior_mean,
/// prior_variance)` prior.
pub fn posterior_params(stats: SufficientStats, prior_mean: f64, prior_variance: f64) -> Result<(f64, f64)> {
    if !(prior_variance > 0.0 && prior_variance.is_finite()) {
        return Err(Error::invalid(format!("prior variance must be positive, got {prior_variance}")));
    }
    let precision = stats.b_stat + 1.0 / prior_variance;
    Ok(((stats.h + prior_mean / prior_variance) / precision, 1.0 / precision))
}

const MAX_POSITIVE_REDRAWS: usize = 10_000;

/// Draws from `N(mean, variance)` restricted to `(0, inf)` by redrawing.
fn draw_positive<R: Rng + ?Sized>(mean: f64, variance: f64, rng: &mut R) -> Result<f64> {
    let law = Normal::new(mean, variance.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    (0..MAX_POSITIVE_REDRAWS)
        .map(|_| law.sample(rng))
        .find(|a| *a > 0.0)
        .ok_or_else(|| Error::invalid(format!("N({mean}, {variance}) puts almost no mass on alpha > 0")))
}

/// How bridges are imputed inside the Gibbs sampler.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ImputationMode {
    /// One draw from the approximate coupled-bridge sampler.
    Approximate,
    /// Final state of a short pseudo-marginal chain with approximate-bridge
    /// proposals.
    PseudoMarginal { iterations: usize, batch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsConfig {
    pub prior_mean: f64,
    pub prior_variance: f64,
    /// Gibbs iterations after the initial prior draw, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub coupling: CouplingConfig,
    /// `None` picks the default general criterion for each interval's step.
    pub criterion: Option<CrossingCriterion>,
    pub steps_per_unit: usize,
    pub max_attempts: usize,
    /// Extra tries for an interval whose bridge sampler runs out of attempts.
    pub retries: usize,
    pub mode: ImputationMode,
}

impl GibbsConfig {
    pub fn new(prior_mean: f64, prior_variance: f64, iterations: usize) -> Self {
        Self {
            prior_mean,
            prior_variance,
            iterations,
            burn_in: 0,
            coupling: CouplingConfig::with_gamma(0.5).expect("valid gamma"),
            criterion: None,
            steps_per_unit: 50,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            retries: 3,
            mode: ImputationMode::Approximate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite() && self.prior_mean.is_finite()) {
            return Err(Error::invalid("prior needs a finite mean and positive variance"));
        }
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::invalid("need iterations > burn_in"));
        }
        if self.steps_per_unit == 0 || self.max_attempts == 0 {
            return Err(Error::invalid("steps_per_unit and max_attempts must be positive"));
        }
        if let ImputationMode::PseudoMarginal { iterations, batch } = self.mode {
            if iterations == 0 || batch == 0 {
                return Err(Error::invalid("pseudo-marginal imputation needs positive iterations and batch"));
            }
        }
        if let Some(c) = &self.criterion {
            c.validate(&self.coupling)?;
        }
        Ok(())
    }
}

/// An imputed interval path together with the sampler effort it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Imputed<const D: usize> {
    pub path: SamplePath<D>,
    pub attempts: usize,
}

/// Fills in one inter-observation interval given the current `alpha`.
pub trait Imputer<const D: usize>: Sync {
    fn impute(&self, alpha: f64, spec: &BridgeSpec<D>, rng: &mut SimRng) -> Result<Imputed<D>>;
}

/// Hyperbolic bridges from the coupled sampler, configured by a [`GibbsConfig`].
#[derive(Debug, Clone, Copy)]
pub struct BridgeImputer {
    coupling: CouplingConfig,
    criterion: Option<CrossingCriterion>,
    max_attempts: usize,
    mode: ImputationMode,
}

impl BridgeImputer {
    pub fn from_config(cfg: &GibbsConfig) -> Self {
        Self { coupling: cfg.coupling, criterion: cfg.criterion, max_attempts: cfg.max_attempts, mode: cfg.mode }
    }
}

impl<const D: usize> Imputer<D> for BridgeImputer {
    fn impute(&self, alpha: f64, spec: &BridgeSpec<D>, rng: &mut SimRng) -> Result<Imputed<D>> {
        let model = HyperbolicModel::<D>::new(alpha)?;
        let criterion = self.criterion.unwrap_or_else(|| CrossingCriterion::default_for_step(spec.grid().step_size()));
        let sampler =
            BridgeSampler::new(model, model, self.coupling, criterion)?.with_max_attempts(self.max_attempts)?;
        match self.mode {
            ImputationMode::Approximate => {
                let b = sampler.sample(spec, rng)?;
                let attempts = b.attempts();
                Ok(Imputed { path: b.path().clone(), attempts })
            }
            ImputationMode::PseudoMarginal { iterations, batch } => {
                let kernel = BridgeKernel::new(sampler, *spec);
                let cfg = ChainConfig::new(iterations).batch(batch).max_trials(DEFAULT_MAX_TRIALS);
                let mut last = None;
                pm_mh_stream(&kernel, &cfg, rng, |r| {
                    last = Some(r.state.path().clone());
                    Ok(())
                })?;
                let path = last.expect("chain retains its final state");
                Ok(Imputed { path, attempts: iterations + 1 })
            }
        }
    }
}

/// Post-burn-in `alpha` draws and imputation effort.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsOutput {
    pub alphas: Vec<f64>,
    /// Mean bridge attempts per imputed interval over the whole run.
    pub mean_attempts: f64,
}

impl GibbsOutput {
    pub fn posterior_mean(&self) -> f64 {
        self.alphas.iter().sum::<f64>() / self.alphas.len() as f64
    }

    /// Equal-tailed interval from empirical quantiles.
    pub fn credible_interval(&self, level: f64) -> (f64, f64) {
        let mut s = self.alphas.clone();
        s.sort_by(f64::total_cmp);
        let tail = (1.0 - level) / 2.0;
        let q = |p: f64| crate::diagnostics::empirical_quantile(&s, p);
        (q(tail), q(1.0 - tail))
    }
}

/// Gibbs sampler with bridges from [`BridgeImputer`].
pub fn gibbs_run<const D: usize, R: Rng + ?Sized>(
    data: &ObservationSet<D>,
    cfg: &GibbsConfig,
    rng: &mut R,
) -> Result<GibbsOutput> {
    gibbs_run_with(data, cfg, &BridgeImputer::from_config(cfg), rng)
}

/// Imputes every interval for the given `alpha`, in parallel, with interval
/// `k` driven by stream `k` of `seed`.
pub fn impute_all<const D: usize, I: Imputer<D>>(
    data: &ObservationSet<D>,
    cfg: &GibbsConfig,
    imputer: &I,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Imputed<D>>> {
    (0..data.intervals())
        .into_par_iter()
        .map(|k| {
            let spec = data.interval_spec(k, cfg.steps_per_unit)?;
            let mut r = replicate_rng(seed, k as u64);
            let mut tries = 0;
            loop {
                match imputer.impute(alpha, &spec, &mut r) {
                    Err(e @ Error::BridgeExhausted { .. }) => {
                        if tries == cfg.retries {
                            return Err(Error::Imputation { interval: k, retries: tries, source: Box::new(e) });
                        }
                        tries += 1;
                    }
                    other => return other,
                }
            }
        })
        .collect()
}

/// Gibbs sampler with a caller-supplied imputer.
pub fn gibbs_run_with<const D: usize, I: Imputer<D>, R: Rng + ?Sized>(
    data: &ObservationSet<D>,
    cfg: &GibbsConfig,
    imputer: &I,
    rng: &mut R,
) -> Result<GibbsOutput> {
    cfg.validate()?;
    let mut alpha = draw_positive(cfg.prior_mean, cfg.prior_variance, rng).map_err(|e| e.at_iteration(0))?;
    let mut alphas = Vec::with_capacity(cfg.iterations - cfg.burn_in);
    let mut attempts = 0usize;
    let mut imputed = 0usize;
    for it in 1..=cfg.iterations {
        let seed = child_seed(rng);
        let paths = impute_all(data, cfg, imputer, alpha, seed).map_err(|e| e.at_iteration(it))?;
        attempts += paths.iter().map(|p| p.attempts).sum::<usize>();
        imputed += paths.len();
        let stats: SufficientStats = paths.iter().map(|p| path_functionals(&p.path)).sum();
        let (mean, var) = posterior_params(stats, cfg.prior_mean, cfg.prior_variance)?;
        alpha = draw_positive(mean, var, rng).map_err(|e| e.at_iteration(it))?;
        if it > cfg.burn_in {
            alphas.push(alpha);
        }
    }
    let mean_attempts = if imputed == 0 { 0.0 } else { attempts as f64 / imputed as f64 };
    Ok(GibbsOutput { alphas, mean_attempts })
}

/// Simulates the hyperbolic model from `x0` and records it at `times`
/// (the first of which is the start time), with `steps_per_unit` Euler steps
/// per unit time between observations.
pub fn simulate_observations<const D: usize, R: Rng + ?Sized>(
    alpha: f64,
    x0: State<D>,
    times: &[f64],
    steps_per_unit: usize,
    rng: &mut R,
) -> Result<ObservationSet<D>> {
    simulate_observations_with(&HyperbolicModel::<D>::new(alpha)?, x0, times, steps_per_unit, rng)
}

/// [`simulate_observations`] for any model.
pub fn simulate_observations_with<const D: usize, M: Diffusion<D> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: State<D>,
    times: &[f64],
    steps_per_unit: usize,
    rng: &mut R,
) -> Result<ObservationSet<D>> {
    if times.is_empty() {
        return Err(Error::invalid("no observation times"));
    }
    let mut values = vec![x0];
    let mut x = x0;
    for w in times.windows(2) {
        let length = w[1] - w[0];
        if !(length > 0.0) {
            return Err(Error::invalid("observation times must be strictly increasing"));
        }
        let steps = ((length * steps_per_unit as f64).round() as usize).max(1);
        let (path, _) = simulate_path(model, &x, &TimeGrid::new(length, steps)?, rng)?;
        x = *path.last();
        values.push(x);
    }
    ObservationSet::new(times.to_vec(), values)
}
