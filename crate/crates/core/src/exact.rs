//! Exact bridge samplers built on approximate bridges.
//!
//! An approximate bridge `z` has density proportional to `f_br(z) pi_T(z)`,
//! where `pi_T(z)` is the probability that the diffusion associated with `z`
//! (started from the reversed process's time-`T` law and driven through the
//! inverse coupling map by the increments of `z`) hits `z`. The geometric
//! number of associated diffusions needed for a hit is an unbiased estimate
//! of `1 / pi_T(z)`, which is what the pseudo-marginal chain uses. The
//! alternative chain replaces the current bridge only when its associated
//! diffusion hits it.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bridge::{ApproximateBridge, BridgeSampler, BridgeSpec, CrossingCriterion};
use crate::coupling::{coincident, CouplingConfig, CouplingFrame};
use crate::error::{Error, Result};
use crate::rng::{child_seed, replicate_rng, SimRng};
use crate::sde::{euler_step, is_finite, simulate_endpoint, Diffusion, SamplePath, State};

/// One simulated diffusion associated with a bridge.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociatedDiffusionRun<const D: usize> {
    pub path: SamplePath<D>,
    pub initial_draw: State<D>,
    pub hit: bool,
    /// First grid interval (1-based, ending at this index) on which the
    /// bridge was hit.
    pub hit_interval: Option<usize>,
}

/// Simulates the full associated diffusion for `z` and reports its first hit.
#[allow(clippy::too_many_arguments)]
pub fn simulate_associated_diffusion<const D: usize, M, Rv, R>(
    z: &ApproximateBridge<D>,
    end: &State<D>,
    model: &M,
    reversed: &Rv,
    cfg: &CouplingConfig,
    criterion: &CrossingCriterion,
    rng: &mut R,
) -> Result<AssociatedDiffusionRun<D>>
where
    M: Diffusion<D> + ?Sized,
    Rv: Diffusion<D> + ?Sized,
    R: Rng + ?Sized,
{
    let grid = *z.path().grid();
    let initial = simulate_endpoint(reversed, end, &grid, rng)?;
    let mut states = Vec::with_capacity(grid.steps() + 1);
    let hit_interval = associated_scan(z, &initial, model, cfg, criterion, rng, false, Some(&mut states))?;
    Ok(AssociatedDiffusionRun {
        path: SamplePath::new(grid, states)?,
        initial_draw: initial,
        hit: hit_interval.is_some(),
        hit_interval,
    })
}

/// Runs the inverse-coupling recursion from `initial` against `z`.
///
/// Returns the first interval on which the criterion fires. With
/// `stop_at_hit` the scan ends there; otherwise the whole path is produced
/// (into `record` when given). A non-finite state ends the scan as a miss.
#[allow(clippy::too_many_arguments)]
fn associated_scan<const D: usize, M, R>(
    z: &ApproximateBridge<D>,
    initial: &State<D>,
    model: &M,
    cfg: &CouplingConfig,
    criterion: &CrossingCriterion,
    rng: &mut R,
    stop_at_hit: bool,
    mut record: Option<&mut Vec<State<D>>>,
) -> Result<Option<usize>>
where
    M: Diffusion<D> + ?Sized,
    R: Rng + ?Sized,
{
    let zs = z.path().states();
    let inc = z.driving_increments().as_slice();
    let delta = z.path().grid().step_size();
    let sqrt_delta = delta.sqrt();
    let mut y = *initial;
    let mut hit = None;
    if let Some(r) = record.as_deref_mut() {
        r.push(y);
    }
    for i in 1..zs.len() {
        let zp = &zs[i - 1];
        let frame = if coincident(&y, zp) {
            None
        } else {
            match CouplingFrame::at(model, &y, zp, cfg, i) {
                Ok(f) => Some(f),
                Err(Error::DegenerateDirection) => None,
                Err(e) => return Err(e),
            }
        };
        let y_next = match frame {
            Some(f) => {
                let du = sqrt_delta * rng.sample::<f64, _>(StandardNormal);
                let dw = f.inverse(cfg, &inc[i - 1], du);
                euler_step(model, &y, delta, &dw)
            }
            // met the bridge: follow it
            None => zs[i],
        };
        if !is_finite(&y_next) {
            if let Some(r) = record.as_deref_mut() {
                let pad = zs.len() - r.len();
                r.extend(std::iter::repeat_n(State::from_element(f64::NAN), pad));
            }
            return Ok(hit);
        }
        if hit.is_none() && (frame.is_none() || criterion.crossed(model, delta, &y, zp, &y_next, &zs[i])?) {
            hit = Some(i);
            if stop_at_hit {
                return Ok(hit);
            }
        }
        if let Some(r) = record.as_deref_mut() {
            r.push(y_next);
        }
        y = y_next;
    }
    Ok(hit)
}

/// Geometric count of associated diffusions until the first hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HitCount {
    pub value: u64,
    pub trials: u64,
}

/// `rho_hat`, the mean of `N` hit counts; unbiased for `1 / pi_T(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoEstimate {
    pub counts: Vec<u64>,
    pub estimate: f64,
}

impl RhoEstimate {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let estimate = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
        Self { counts, estimate }
    }
}

/// A proposal mechanism together with its hit test: the two ingredients the
/// exact samplers need.
pub trait ProposalKernel: Sync {
    type Proposal: Clone + Send + Sync;

    /// Draws an independent proposal.
    fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self::Proposal>;

    /// Simulates one associated diffusion and reports whether it hits `x`.
    fn hits<R: Rng + ?Sized>(&self, x: &Self::Proposal, rng: &mut R) -> Result<bool>;
}

/// Approximate-bridge proposals with hits decided by associated diffusions.
#[derive(Debug, Clone)]
pub struct BridgeKernel<const D: usize, M, Rv> {
    sampler: BridgeSampler<M, Rv>,
    spec: BridgeSpec<D>,
}

impl<const D: usize, M: Diffusion<D>, Rv: Diffusion<D>> BridgeKernel<D, M, Rv> {
    pub fn new(sampler: BridgeSampler<M, Rv>, spec: BridgeSpec<D>) -> Self {
        Self { sampler, spec }
    }

    pub fn sampler(&self) -> &BridgeSampler<M, Rv> {
        &self.sampler
    }

    pub fn spec(&self) -> &BridgeSpec<D> {
        &self.spec
    }
}

impl<const D: usize, M: Diffusion<D>, Rv: Diffusion<D>> ProposalKernel for BridgeKernel<D, M, Rv> {
    type Proposal = ApproximateBridge<D>;

    fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ApproximateBridge<D>> {
        self.sampler.sample(&self.spec, rng)
    }

    fn hits<R: Rng + ?Sized>(&self, x: &ApproximateBridge<D>, rng: &mut R) -> Result<bool> {
        let initial = match simulate_endpoint(self.sampler.reversed(), self.spec.end(), self.spec.grid(), rng) {
            Ok(a) => a,
            Err(Error::NonFinite { .. }) => return Ok(false),
            Err(e) => return Err(e),
        };
        let hit = associated_scan(
            x,
            &initial,
            self.sampler.model(),
            self.sampler.coupling(),
            self.sampler.criterion(),
            rng,
            true,
            None,
        )?;
        Ok(hit.is_some())
    }
}

pub const DEFAULT_MAX_TRIALS: u64 = 10_000;

/// Counts associated diffusions until one hits `x`.
pub fn sample_hit_count<K: ProposalKernel, R: Rng + ?Sized>(
    kernel: &K,
    x: &K::Proposal,
    max_trials: u64,
    rng: &mut R,
) -> Result<HitCount> {
    if max_trials == 0 {
        return Err(Error::invalid("max_trials must be at least 1"));
    }
    for trial in 1..=max_trials {
        if kernel.hits(x, rng)? {
            return Ok(HitCount { value: trial, trials: trial });
        }
    }
    Err(Error::HitBudgetExhausted { trials: max_trials as usize })
}

/// `N` independent hit counts for `x`, drawn in parallel on split streams.
pub fn estimate_rho<K: ProposalKernel, R: Rng + ?Sized>(
    kernel: &K,
    x: &K::Proposal,
    batch: usize,
    max_trials: u64,
    rng: &mut R,
) -> Result<RhoEstimate> {
    if batch == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let seed = child_seed(rng);
    let counts = (0..batch)
        .into_par_iter()
        .map(|j| {
            let mut r: SimRng = replicate_rng(seed, j as u64);
            sample_hit_count(kernel, x, max_trials, &mut r).map(|h| h.value)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RhoEstimate::from_counts(counts))
}

/// Run length, burn-in, thinning and estimator settings for the chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainConfig {
    /// Iterations after the initial state, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
    /// `N`, the number of hit counts per estimate (pseudo-marginal only).
    pub batch: usize,
    pub max_trials: u64,
}

impl ChainConfig {
    pub fn new(iterations: usize) -> Self {
        Self { iterations, burn_in: 0, thin: 1, batch: 1, max_trials: DEFAULT_MAX_TRIALS }
    }

    pub fn burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn thin(mut self, thin: usize) -> Self {
        self.thin = thin;
        self
    }

    pub fn batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub fn max_trials(mut self, max_trials: u64) -> Self {
        self.max_trials = max_trials;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 || self.batch == 0 || self.max_trials == 0 {
            return Err(Error::invalid("iterations, thin, batch and max_trials must all be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::invalid("burn-in must be shorter than the run"));
        }
        Ok(())
    }

    fn retained(&self, iteration: usize) -> bool {
        iteration > self.burn_in && (iteration - self.burn_in).is_multiple_of(self.thin)
    }
}

/// A retained chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord<P> {
    pub iteration: usize,
    pub state: P,
    /// Current `rho_hat` (pseudo-marginal chain only).
    pub rho_hat: Option<f64>,
    /// Cumulative number of accepted moves up to this iteration.
    pub accepted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainSummary {
    pub iterations: usize,
    pub accepted: usize,
    pub retained: usize,
}

impl ChainSummary {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.iterations as f64
    }
}

/// Pseudo-marginal Metropolis-Hastings with independent proposals.
///
/// The proposal `(z, T)` replaces the current `(x, T_old)` with probability
/// `min(1, rho_hat(T) / rho_hat(T_old))`; on rejection both the state and its
/// estimate are kept. Each retained state is passed to `sink`.
pub fn pm_mh_stream<K, R, F>(kernel: &K, cfg: &ChainConfig, rng: &mut R, mut sink: F) -> Result<ChainSummary>
where
    K: ProposalKernel,
    R: Rng + ?Sized,
    F: FnMut(ChainRecord<&K::Proposal>) -> Result<()>,
{
    cfg.validate()?;
    let mut x = kernel.propose(rng).map_err(|e| e.at_iteration(0))?;
    let mut rho = estimate_rho(kernel, &x, cfg.batch, cfg.max_trials, rng).map_err(|e| e.at_iteration(0))?;
    let mut accepted = 0;
    let mut retained = 0;
    for it in 1..=cfg.iterations {
        let z = kernel.propose(rng).map_err(|e| e.at_iteration(it))?;
        let rho_z = estimate_rho(kernel, &z, cfg.batch, cfg.max_trials, rng).map_err(|e| e.at_iteration(it))?;
        let u: f64 = rng.random();
        if u * rho.estimate < rho_z.estimate {
            x = z;
            rho = rho_z;
            accepted += 1;
        }
        if cfg.retained(it) {
            retained += 1;
            sink(ChainRecord { iteration: it, state: &x, rho_hat: Some(rho.estimate), accepted })?;
        }
    }
    Ok(ChainSummary { iterations: cfg.iterations, accepted, retained })
}

/// Alternative exact chain: the current state is replaced by a fresh
/// independent proposal exactly when its associated diffusion hits it.
pub fn alt_mcmc_stream<K, R, F>(kernel: &K, cfg: &ChainConfig, rng: &mut R, mut sink: F) -> Result<ChainSummary>
where
    K: ProposalKernel,
    R: Rng + ?Sized,
    F: FnMut(ChainRecord<&K::Proposal>) -> Result<()>,
{
    cfg.validate()?;
    let mut x = kernel.propose(rng).map_err(|e| e.at_iteration(0))?;
    let mut accepted = 0;
    let mut retained = 0;
    for it in 1..=cfg.iterations {
        if kernel.hits(&x, rng).map_err(|e| e.at_iteration(it))? {
            x = kernel.propose(rng).map_err(|e| e.at_iteration(it))?;
            accepted += 1;
        }
        if cfg.retained(it) {
            retained += 1;
            sink(ChainRecord { iteration: it, state: &x, rho_hat: None, accepted })?;
        }
    }
    Ok(ChainSummary { iterations: cfg.iterations, accepted, retained })
}

/// Collects the retained states of a pseudo-marginal run.
pub fn pm_mh_run<K: ProposalKernel, R: Rng + ?Sized>(
    kernel: &K,
    cfg: &ChainConfig,
    rng: &mut R,
) -> Result<(Vec<ChainRecord<K::Proposal>>, ChainSummary)> {
    let mut out = Vec::new();
    let summary = pm_mh_stream(kernel, cfg, rng, |r| {
        out.push(owned(r));
        Ok(())
    })?;
    Ok((out, summary))
}

/// Collects the retained states of an alternative-chain run.
pub fn alt_mcmc_run<K: ProposalKernel, R: Rng + ?Sized>(
    kernel: &K,
    cfg: &ChainConfig,
    rng: &mut R,
) -> Result<(Vec<ChainRecord<K::Proposal>>, ChainSummary)> {
    let mut out = Vec::new();
    let summary = alt_mcmc_stream(kernel, cfg, rng, |r| {
        out.push(owned(r));
        Ok(())
    })?;
    Ok((out, summary))
}

fn owned<P: Clone>(r: ChainRecord<&P>) -> ChainRecord<P> {
    ChainRecord { iteration: r.iteration, state: r.state.clone(), rho_hat: r.rho_hat, accepted: r.accepted }
}

/// Least-squares fit of `Var(rho_hat_N) = a + b / N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceRegression {
    /// Estimates `Var(1 / pi_T(B))`.
    pub intercept: f64,
    /// Estimates `E[(1 - pi_T(B)) / pi_T(B)^2]`.
    pub slope: f64,
    /// Standard errors; NaN with only two points.
    pub intercept_se: f64,
    pub slope_se: f64,
}

impl VarianceRegression {
    /// Slope implied by a constant hitting probability `pi`.
    pub fn slope_for_constant_pi(pi: f64) -> f64 {
        (1.0 - pi) / (pi * pi)
    }
}

/// Regresses empirical variances of `rho_hat` on `1 / N`.
pub fn pi_variance_regression(points: &[(usize, f64)]) -> Result<VarianceRegression> {
    let mut distinct: Vec<usize> = points.iter().map(|p| p.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 || distinct[0] == 0 {
        return Err(Error::Underdetermined("need at least two distinct positive batch sizes"));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| 1.0 / p.0 as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (intercept_se, slope_se) = if points.len() > 2 {
        let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        let s2 = rss / (n - 2.0);
        ((s2 * (1.0 / n + mx * mx / sxx)).sqrt(), (s2 / sxx).sqrt())
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(VarianceRegression { intercept, slope, intercept_se, slope_se })
}

/// Sample mean and unbiased variance.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::CrossingCriterion;
    use crate::models::OrnsteinUhlenbeck;
    use crate::sde::{simulate_path, Matrix, TimeGrid};
    use approx::assert_abs_diff_eq;
    use nalgebra::{matrix, vector};

    /// Proposals are class labels; hits are Bernoulli with a class-specific
    /// probability.
    struct Stub {
        class_one: f64,
        hit: [f64; 2],
    }

    impl ProposalKernel for Stub {
        type Proposal = usize;
        fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
            Ok(usize::from(rng.random::<f64>() < self.class_one))
        }
        fn hits<R: Rng + ?Sized>(&self, x: &usize, rng: &mut R) -> Result<bool> {
            Ok(rng.random::<f64>() < self.hit[*x])
        }
    }

    #[test]
    fn hit_count_edge_cases() {
        let always = Stub { class_one: 0.0, hit: [1.0, 1.0] };
        let mut rng = replicate_rng(1, 0);
        for _ in 0..20 {
            assert_eq!(sample_hit_count(&always, &0, 5, &mut rng).unwrap().value, 1);
        }
        let never = Stub { class_one: 0.0, hit: [0.0, 0.0] };
        assert!(matches!(
            sample_hit_count(&never, &0, 7, &mut rng),
            Err(Error::HitBudgetExhausted { trials: 7 })
        ));
    }

    #[test]
    fn geometric_mean_of_hit_counts() {
        let k = Stub { class_one: 0.0, hit: [0.25, 0.25] };
        let est = estimate_rho(&k, &0, 100_000, 10_000, &mut replicate_rng(2, 0)).unwrap();
        let se = ((1.0 - 0.25) / 0.0625 / 1e5f64).sqrt();
        assert!((est.estimate - 4.0).abs() < 3.0 * se, "{}", est.estimate);
        assert!(est.counts.iter().all(|&c| c >= 1));
    }

    #[test]
    fn constant_pi_accepts_nearly_always_for_large_batch() {
        let k = Stub { class_one: 0.5, hit: [0.5, 0.5] };
        let cfg = ChainConfig::new(500).batch(2000);
        let (_, summary) = pm_mh_run(&k, &cfg, &mut replicate_rng(3, 0)).unwrap();
        assert!(summary.acceptance_rate() > 0.9, "{}", summary.acceptance_rate());
    }

    #[test]
    fn identical_estimates_always_accept() {
        let k = Stub { class_one: 0.5, hit: [1.0, 1.0] };
        let (_, summary) = pm_mh_run(&k, &ChainConfig::new(300).batch(3), &mut replicate_rng(4, 0)).unwrap();
        assert_eq!(summary.accepted, 300);
    }

    #[test]
    fn rejection_keeps_state_and_estimate() {
        let k = Stub { class_one: 0.5, hit: [0.9, 0.05] };
        let (recs, _) = pm_mh_run(&k, &ChainConfig::new(2000), &mut replicate_rng(5, 0)).unwrap();
        let mut kept = 0;
        for w in recs.windows(2) {
            if w[1].accepted == w[0].accepted {
                assert_eq!(w[1].state, w[0].state);
                assert_eq!(w[1].rho_hat.unwrap().to_bits(), w[0].rho_hat.unwrap().to_bits());
                kept += 1;
            }
        }
        assert!(kept > 100);
    }

    #[test]
    fn alt_chain_stub_extremes() {
        let never = Stub { class_one: 0.5, hit: [0.0, 0.0] };
        let (recs, s) = alt_mcmc_run(&never, &ChainConfig::new(200), &mut replicate_rng(6, 0)).unwrap();
        assert_eq!(s.accepted, 0);
        assert!(recs.iter().all(|r| r.state == recs[0].state));
        let always = Stub { class_one: 0.5, hit: [1.0, 1.0] };
        let (recs, s) = alt_mcmc_run(&always, &ChainConfig::new(4000), &mut replicate_rng(6, 1)).unwrap();
        assert_eq!(s.accepted, 4000);
        let ones = recs.iter().filter(|r| r.state == 1).count() as f64 / 4000.0;
        assert!((ones - 0.5).abs() < 3.0 * (0.25f64 / 4000.0).sqrt());
    }

    #[test]
    fn thinning_and_burn_in() {
        let k = Stub { class_one: 0.5, hit: [1.0, 1.0] };
        let cfg = ChainConfig::new(100).burn_in(20).thin(10);
        let (recs, s) = alt_mcmc_run(&k, &cfg, &mut replicate_rng(7, 0)).unwrap();
        assert_eq!(recs.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![30, 40, 50, 60, 70, 80, 90, 100]);
        assert_eq!(s.retained, 8);
        assert!(alt_mcmc_run(&k, &ChainConfig::new(10).burn_in(10), &mut replicate_rng(7, 0)).is_err());
    }

    #[test]
    fn regression_on_exact_line() {
        let pts: Vec<_> = [50usize, 100, 150, 200, 300].iter().map(|&n| (n, 3.0 + 5.0 / n as f64)).collect();
        let r = pi_variance_regression(&pts).unwrap();
        assert_abs_diff_eq!(r.intercept, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.slope, 5.0, epsilon = 1e-9);
        assert!(r.intercept_se < 1e-9);
        assert!(pi_variance_regression(&[(50, 1.0)]).is_err());
        assert!(pi_variance_regression(&[(50, 1.0), (50, 2.0)]).is_err());
        assert!(pi_variance_regression(&[(50, 1.0), (100, 2.0)]).unwrap().intercept_se.is_nan());
    }

    #[test]
    fn regression_recovers_constant_pi() {
        // rho_hat of N geometric(0.2) counts: variance (1 - p) / (p^2 N)
        let k = Stub { class_one: 0.0, hit: [0.2, 0.2] };
        let mut rng = replicate_rng(8, 0);
        let mut pts = Vec::new();
        for n in [50usize, 100, 150, 200, 300] {
            let vals: Vec<f64> = (0..2000)
                .map(|_| estimate_rho(&k, &0, n, 10_000, &mut rng).unwrap().estimate)
                .collect();
            pts.push((n, mean_and_variance(&vals).1));
        }
        let r = pi_variance_regression(&pts).unwrap();
        assert!(r.intercept.abs() < 3.0 * r.intercept_se.max(0.01), "{r:?}");
        assert!((r.slope - 20.0).abs() < 2.0, "{r:?}");
    }

    fn reference_ou() -> OrnsteinUhlenbeck<2> {
        OrnsteinUhlenbeck::new(State::zeros(), matrix![1.5, 1.0; 1.0, 1.5], Matrix::identity()).unwrap()
    }

    #[test]
    fn inverse_map_recovers_forward_path() {
        // Forward coupled path X' driven against X; the inverse recursion
        // started at X_0, fed the X' increments and the complementary noise,
        // must return X.
        let ou = OrnsteinUhlenbeck::new(State::zeros(), matrix![1.0, 1.0; 0.0, 1.0], matrix![1.0, 0.0; 0.3, 0.9]).unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        for (gamma, correction) in [(-1.0, false), (0.0, true), (0.5, false), (0.9, true)] {
            let cfg = CouplingConfig::new(gamma, correction).unwrap();
            let mut rng = replicate_rng(10, 0);
            let (x_path, dw) = simulate_path(&ou, &vector![1.0, -1.0], &grid, &mut rng).unwrap();
            let x = x_path.states();
            let mut xp = vector![-0.5, 0.5];
            let mut y = x[0];
            let sd = grid.step_size().sqrt();
            for i in 1..=50 {
                let f = CouplingFrame::at(&ou, &x[i - 1], &xp, &cfg, i).unwrap();
                let db = sd * rng.sample::<f64, _>(StandardNormal);
                let dwp = f.forward(&cfg, dw.get(i), db);
                let du = f.complementary_noise(&cfg, dw.get(i), db);
                let back = CouplingFrame::at(&ou, &y, &xp, &cfg, i).unwrap().inverse(&cfg, &dwp, du);
                y = euler_step(&ou, &y, grid.step_size(), &back);
                xp = euler_step(&ou, &xp, grid.step_size(), &dwp);
                assert!((y - x[i]).norm() < 1e-10, "gamma {gamma} step {i}");
            }
        }
    }

    #[test]
    fn reflection_associated_diffusion_is_deterministic_given_start() {
        let ou = reference_ou();
        let spec = BridgeSpec::new(State::zeros(), State::zeros(), 1.0, 50).unwrap();
        let cfg = CouplingConfig::reflection();
        let crit = CrossingCriterion::reflection();
        let z = BridgeSampler::new(&ou, &ou, cfg, crit).unwrap().sample(&spec, &mut replicate_rng(11, 0)).unwrap();
        let start = vector![0.7, -0.3];
        let run = |seed| {
            let mut states = Vec::new();
            let hit = associated_scan(&z, &start, &ou, &cfg, &crit, &mut replicate_rng(seed, 0), false, Some(&mut states)).unwrap();
            (states, hit)
        };
        assert_eq!(run(1), run(2));
    }

    #[test]
    fn coincident_start_hits_immediately() {
        let ou = reference_ou();
        let spec = BridgeSpec::new(vector![0.3, 0.3], State::zeros(), 1.0, 50).unwrap();
        let cfg = CouplingConfig::reflection();
        let crit = CrossingCriterion::reflection();
        let z = BridgeSampler::new(&ou, &ou, cfg, crit).unwrap().sample(&spec, &mut replicate_rng(12, 0)).unwrap();
        let hit = associated_scan(&z, &vector![0.3, 0.3], &ou, &cfg, &crit, &mut replicate_rng(0, 0), true, None).unwrap();
        assert_eq!(hit, Some(1));
    }

    #[test]
    fn full_associated_run_shapes() {
        let ou = reference_ou();
        let spec = BridgeSpec::new(vector![0.5, 0.0], vector![0.0, 0.5], 1.0, 50).unwrap();
        let cfg = CouplingConfig::with_gamma(0.5).unwrap();
        let crit = CrossingCriterion::default_for_step(0.02);
        let z = BridgeSampler::new(&ou, &ou, cfg, crit).unwrap().sample(&spec, &mut replicate_rng(13, 0)).unwrap();
        let mut rng = replicate_rng(14, 0);
        let mut hits = 0;
        for _ in 0..200 {
            let run = simulate_associated_diffusion(&z, spec.end(), &ou, &ou, &cfg, &crit, &mut rng).unwrap();
            assert_eq!(run.path.states().len(), 51);
            assert_eq!(*run.path.first(), run.initial_draw);
            assert_eq!(run.hit, run.hit_interval.is_some());
            hits += usize::from(run.hit);
        }
        assert!(hits > 0);
    }
}
