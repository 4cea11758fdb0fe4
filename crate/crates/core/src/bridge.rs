//! Approximate diffusion bridges by coupling.
//!
//! A path `Y*` of the time-reversed diffusion is simulated from `b`; read
//! backwards it is a forward-time path ending at `b`. A second path `Y'` is
//! simulated forward from `a`, driven by increments coupled to those of the
//! reversed path. At the first grid interval on which the two are judged to
//! have crossed, the bridge is spliced: `Y'` before the crossing and the
//! reversed `Y*` after it.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::coupling::{coincident, CouplingConfig, CouplingFrame};
use crate::error::{Error, Result};
use crate::sde::{
    euler_step, implied_increment, is_finite, simulate_path, Diffusion, Matrix, SamplePath, State, TimeGrid,
    WienerIncrements,
};

/// Endpoints and time grid of an `(a, b, T)`-bridge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeSpec<const D: usize> {
    start: State<D>,
    end: State<D>,
    grid: TimeGrid,
}

impl<const D: usize> BridgeSpec<D> {
    pub fn new(start: State<D>, end: State<D>, horizon: f64, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!("a bridge needs at least 2 steps, got {steps}")));
        }
        if !is_finite(&start) || !is_finite(&end) {
            return Err(Error::invalid("bridge endpoints must be finite"));
        }
        Ok(Self { start, end, grid: TimeGrid::new(horizon, steps)? })
    }

    pub fn start(&self) -> &State<D> {
        &self.start
    }

    pub fn end(&self) -> &State<D> {
        &self.end
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
}

/// An accepted approximate bridge.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproximateBridge<const D: usize> {
    path: SamplePath<D>,
    coupling_index: usize,
    driving_increments: WienerIncrements<D>,
    attempts: usize,
}

impl<const D: usize> ApproximateBridge<D> {
    /// The spliced path `Z`.
    pub fn path(&self) -> &SamplePath<D> {
        &self.path
    }

    /// `rho`: states with index below it come from the forward path, the
    /// rest from the reversed path.
    pub fn coupling_index(&self) -> usize {
        self.coupling_index
    }

    /// `dW~_i`: the coupled forward increments for `i < rho` and the
    /// reversed-path increments for `i >= rho`.
    pub fn driving_increments(&self) -> &WienerIncrements<D> {
        &self.driving_increments
    }

    /// Number of attempts used, including the successful one.
    pub fn attempts(&self) -> usize {
        self.attempts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossingKind {
    /// Sign change of `(X - X')^T V^-1 (X - X')` across an interval, with an
    /// optional proximity gate.
    General,
    /// Crossing of the reflection hyperplane; only meaningful for `gamma = -1`.
    Reflection,
}

/// Grid-level rule deciding that the two paths have met.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingCriterion {
    pub kind: CrossingKind,
    /// `|X - X'|` must not exceed this for the general rule; 0 disables the gate.
    #[serde(default)]
    pub proximity: f64,
}

impl CrossingCriterion {
    pub fn general(proximity: f64) -> Result<Self> {
        if !(proximity >= 0.0 && proximity.is_finite()) {
            return Err(Error::invalid(format!("proximity must be non-negative, got {proximity}")));
        }
        Ok(Self { kind: CrossingKind::General, proximity })
    }

    pub fn reflection() -> Self {
        Self { kind: CrossingKind::Reflection, proximity: 0.0 }
    }

    /// General rule with gate `0.05 sqrt(delta / 0.02)`.
    pub fn default_for_step(delta: f64) -> Self {
        Self { kind: CrossingKind::General, proximity: default_proximity(delta) }
    }

    /// Rejects the reflection rule for couplings other than `gamma = -1`.
    pub fn validate(&self, cfg: &CouplingConfig) -> Result<()> {
        if self.kind == CrossingKind::Reflection && cfg.gamma() != -1.0 {
            return Err(Error::invalid(format!(
                "the reflection criterion requires gamma = -1, got {}",
                cfg.gamma()
            )));
        }
        Ok(())
    }

    /// Applies the rule on one interval. `xi`, `xnext` belong to the path
    /// driven by the base increments and `xpi`, `xpnext` to the coupled one;
    /// `V` and the drift are evaluated at `xi`.
    pub fn crossed<const D: usize, M: Diffusion<D> + ?Sized>(
        &self,
        model: &M,
        delta: f64,
        xi: &State<D>,
        xpi: &State<D>,
        xnext: &State<D>,
        xpnext: &State<D>,
    ) -> Result<bool> {
        let v_inv = model
            .covariance_inverse(xi)
            .ok_or(Error::SingularDiffusion { index: 0 })?;
        Ok(match self.kind {
            CrossingKind::General => detect_crossing_general(xi, xpi, xnext, xpnext, &v_inv, self.proximity),
            CrossingKind::Reflection => {
                detect_crossing_reflection(xi, xpi, xnext, &model.drift(xi), &v_inv, delta)
            }
        })
    }
}

pub fn default_proximity(delta: f64) -> f64 {
    0.05 * (delta / 0.02).sqrt()
}

/// `(xi - xpi)^T V^-1 (xnext - xpnext) < 0`, gated by `|xi - xpi| <= eps`
/// when `eps > 0`.
pub fn detect_crossing_general<const D: usize>(
    xi: &State<D>,
    xpi: &State<D>,
    xnext: &State<D>,
    xpnext: &State<D>,
    v_inv: &Matrix<D>,
    eps: f64,
) -> bool {
    let diff = xi - xpi;
    if eps > 0.0 && diff.norm() > eps {
        return false;
    }
    diff.dot(&(v_inv * (xnext - xpnext))) < 0.0
}

/// `xnext^T V^-1 d <= (delta alpha(xi) + (xi + xpi) / 2)^T V^-1 d` with
/// `d = xi - xpi`: the path has reached the far side of the hyperplane
/// bisecting the segment, shifted by the drift.
pub fn detect_crossing_reflection<const D: usize>(
    xi: &State<D>,
    xpi: &State<D>,
    xnext: &State<D>,
    drift_at_xi: &State<D>,
    v_inv: &Matrix<D>,
    delta: f64,
) -> bool {
    let w = v_inv * (xi - xpi);
    let plane = drift_at_xi * delta + (xi + xpi) * 0.5;
    xnext.dot(&w) <= plane.dot(&w)
}

/// `Phi(-omega / (2 sqrt delta))` with `omega^2 = (xi - xpi)^T V^-1 (xi - xpi)`.
pub fn coupling_probability_lower_bound<const D: usize>(
    xi: &State<D>,
    xpi: &State<D>,
    v_inv: &Matrix<D>,
    delta: f64,
) -> f64 {
    let d = xi - xpi;
    let omega = d.dot(&(v_inv * d)).max(0.0).sqrt();
    normal_cdf(-omega / (2.0 * delta.sqrt()))
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `dW^rev_i = sigma(Y*_{N-i+1})^-1 (Y*_{N-i} - Y*_{N-i+1} - alpha(Y*_{N-i+1}) delta)`,
/// the increments that drive the reversed path under the forward drift.
pub fn reversed_increments<const D: usize, M: Diffusion<D> + ?Sized>(
    y_star: &SamplePath<D>,
    model: &M,
) -> Result<WienerIncrements<D>> {
    let ys = y_star.states();
    let n = ys.len() - 1;
    let delta = y_star.grid().step_size();
    (1..=n)
        .map(|i| implied_increment(model, &ys[n - i + 1], &ys[n - i], delta, i))
        .collect::<Result<Vec<_>>>()
        .map(WienerIncrements::new)
}

/// Simulates the full coupled forward path `Y'` from `a` against the reversed
/// path `y_star`. Once the two coincide, `Y'` follows the reversed path.
pub fn simulate_coupled_forward<const D: usize, M: Diffusion<D> + ?Sized, R: Rng + ?Sized>(
    y_star: &SamplePath<D>,
    a: &State<D>,
    model: &M,
    cfg: &CouplingConfig,
    rng: &mut R,
) -> Result<(SamplePath<D>, WienerIncrements<D>)> {
    let grid = *y_star.grid();
    let ys = y_star.states();
    let n = grid.steps();
    let delta = grid.step_size();
    let sqrt_delta = delta.sqrt();
    let rev = reversed_increments(y_star, model)?.into_vec();
    let mut states = Vec::with_capacity(n + 1);
    let mut increments = Vec::with_capacity(n);
    states.push(*a);
    let mut y = *a;
    let mut coupled = false;
    for i in 1..=n {
        let x = &ys[n - i + 1];
        coupled = coupled || coincident(x, &y);
        let dw = if coupled {
            y = ys[n - i];
            rev[i - 1]
        } else {
            let frame = match CouplingFrame::at(model, x, &y, cfg, i) {
                Ok(f) => f,
                Err(Error::DegenerateDirection) => {
                    coupled = true;
                    y = ys[n - i];
                    states.push(y);
                    increments.push(rev[i - 1]);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let db = sqrt_delta * rng.sample::<f64, _>(StandardNormal);
            let dw = frame.forward(cfg, &rev[i - 1], db);
            y = euler_step(model, &y, delta, &dw);
            if !is_finite(&y) {
                return Err(Error::NonFinite { step: i });
            }
            dw
        };
        states.push(y);
        increments.push(dw);
    }
    Ok((SamplePath::new(grid, states)?, WienerIncrements::new(increments)))
}

/// Rejection sampler for approximate bridges.
#[derive(Debug, Clone)]
pub struct BridgeSampler<M, Rv> {
    model: M,
    reversed: Rv,
    coupling: CouplingConfig,
    criterion: CrossingCriterion,
    max_attempts: usize,
}

pub const DEFAULT_MAX_ATTEMPTS: usize = 10_000;

impl<M, Rv> BridgeSampler<M, Rv> {
    pub fn new(model: M, reversed: Rv, coupling: CouplingConfig, criterion: CrossingCriterion) -> Result<Self> {
        criterion.validate(&coupling)?;
        Ok(Self { model, reversed, coupling, criterion, max_attempts: DEFAULT_MAX_ATTEMPTS })
    }

    pub fn with_max_attempts(mut self, max_attempts: usize) -> Result<Self> {
        if max_attempts == 0 {
            return Err(Error::invalid("max_attempts must be at least 1"));
        }
        self.max_attempts = max_attempts;
        Ok(self)
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn reversed(&self) -> &Rv {
        &self.reversed
    }

    pub fn coupling(&self) -> &CouplingConfig {
        &self.coupling
    }

    pub fn criterion(&self) -> &CrossingCriterion {
        &self.criterion
    }

    pub fn max_attempts(&self) -> usize {
        self.max_attempts
    }

    /// Draws bridges until one is accepted or the attempt budget runs out.
    pub fn sample<const D: usize, R: Rng + ?Sized>(
        &self,
        spec: &BridgeSpec<D>,
        rng: &mut R,
    ) -> Result<ApproximateBridge<D>>
    where
        M: Diffusion<D>,
        Rv: Diffusion<D>,
    {
        for attempt in 1..=self.max_attempts {
            if let Some(mut bridge) = self.attempt(spec, rng)? {
                bridge.attempts = attempt;
                return Ok(bridge);
            }
        }
        Err(Error::BridgeExhausted { attempts: self.max_attempts })
    }

    /// A single attempt; `None` when the paths did not cross or a state
    /// became non-finite.
    pub fn attempt<const D: usize, R: Rng + ?Sized>(
        &self,
        spec: &BridgeSpec<D>,
        rng: &mut R,
    ) -> Result<Option<ApproximateBridge<D>>>
    where
        M: Diffusion<D>,
        Rv: Diffusion<D>,
    {
        let grid = spec.grid;
        let n = grid.steps();
        let delta = grid.step_size();
        let sqrt_delta = delta.sqrt();
        let y_star = match simulate_path(&self.reversed, &spec.end, &grid, rng) {
            Ok((path, _)) => path.into_states(),
            Err(Error::NonFinite { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };

        let mut forward = Vec::with_capacity(n + 1);
        let mut coupled_dw = Vec::with_capacity(n);
        forward.push(spec.start);
        let mut y = spec.start;
        let mut rho = None;
        for i in 0..n {
            let x = &y_star[n - i];
            let x_next = &y_star[n - i - 1];
            if coincident(x, &y) {
                rho = Some(i + 1);
                break;
            }
            let frame = match CouplingFrame::at(&self.model, x, &y, &self.coupling, i + 1) {
                Ok(f) => f,
                Err(Error::DegenerateDirection) => {
                    rho = Some(i + 1);
                    break;
                }
                Err(e) => return Err(e),
            };
            let dw_rev = implied_increment(&self.model, x, x_next, delta, i + 1)?;
            let db = sqrt_delta * rng.sample::<f64, _>(StandardNormal);
            let dw = frame.forward(&self.coupling, &dw_rev, db);
            let y_next = euler_step(&self.model, &y, delta, &dw);
            if !is_finite(&y_next) {
                return Ok(None);
            }
            if self
                .criterion
                .crossed(&self.model, delta, x, &y, x_next, &y_next)
                .map_err(|_| Error::SingularDiffusion { index: n - i })?
            {
                rho = Some(i + 1);
                break;
            }
            coupled_dw.push(dw);
            forward.push(y_next);
            y = y_next;
        }
        let Some(rho) = rho else {
            return Ok(None);
        };

        let mut states = forward;
        states.truncate(rho);
        states.extend((rho..=n).map(|j| y_star[n - j]));
        let mut increments = coupled_dw;
        increments.truncate(rho - 1);
        for j in rho..=n {
            increments.push(implied_increment(&self.model, &y_star[n - j + 1], &y_star[n - j], delta, j)?);
        }
        Ok(Some(ApproximateBridge {
            path: SamplePath::new(grid, states)?,
            coupling_index: rho,
            driving_increments: WienerIncrements::new(increments),
            attempts: 1,
        }))
    }
}

/// One approximate bridge with the default attempt budget replaced by
/// `max_attempts`.
pub fn sample_approximate_bridge<const D: usize, M, Rv, R>(
    model: &M,
    reversed: &Rv,
    spec: &BridgeSpec<D>,
    cfg: &CouplingConfig,
    criterion: &CrossingCriterion,
    max_attempts: usize,
    rng: &mut R,
) -> Result<ApproximateBridge<D>>
where
    M: Diffusion<D> + ?Sized,
    Rv: Diffusion<D> + ?Sized,
    R: Rng + ?Sized,
{
    BridgeSampler::new(model, reversed, *cfg, *criterion)?
        .with_max_attempts(max_attempts)?
        .sample(spec, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::OrnsteinUhlenbeck;
    use crate::reversal::ReversedModel;
    use crate::rng::replicate_rng;
    use crate::sde::{replay, FnModel};
    use approx::assert_abs_diff_eq;
    use nalgebra::{matrix, vector};

    fn reference_ou() -> OrnsteinUhlenbeck<2> {
        OrnsteinUhlenbeck::new(State::zeros(), matrix![1.5, 1.0; 1.0, 1.5], Matrix::identity()).unwrap()
    }

    #[test]
    fn general_criterion_examples() {
        let i = Matrix::<2>::identity();
        let z = State::<2>::zeros();
        assert!(detect_crossing_general(&vector![1.0, 0.0], &z, &vector![-1.0, 0.0], &z, &i, 0.0));
        assert!(!detect_crossing_general(&vector![1.0, 0.0], &z, &vector![1.0, 0.0], &z, &i, 0.0));
        let v_inv = matrix![0.6, -0.4; -0.4, 0.6].try_inverse().unwrap();
        let (d, dn) = (vector![0.1, 0.1], vector![-0.02, -0.03]);
        assert!(!detect_crossing_general(&d, &z, &dn, &z, &v_inv, 0.05));
        assert!(detect_crossing_general(&d, &z, &dn, &z, &v_inv, 0.2));
        assert!(detect_crossing_general(&d, &z, &dn, &z, &v_inv, 0.0));
    }

    #[test]
    fn reflection_criterion_examples() {
        let i = Matrix::<2>::identity();
        let z = State::<2>::zeros();
        let (xi, xpi) = (vector![1.0, 0.0], vector![-1.0, 0.0]);
        assert!(detect_crossing_reflection(&xi, &xpi, &vector![-0.1, 0.0], &z, &i, 0.02));
        let xi = vector![1.0, 0.0];
        assert!(!detect_crossing_reflection(&xi, &z, &xi, &z, &i, 0.02));
        assert!(detect_crossing_reflection(&xi, &z, &vector![0.5, 0.0], &z, &i, 0.02));
        // drift shifts the plane
        assert!(detect_crossing_reflection(&xi, &z, &vector![0.55, 0.0], &vector![5.0, 0.0], &i, 0.02));
    }

    #[test]
    fn lower_bound_examples() {
        let i = Matrix::<2>::identity();
        let z = State::<2>::zeros();
        assert_abs_diff_eq!(coupling_probability_lower_bound(&vector![1e-12, 0.0], &z, &i, 0.02), 0.5, epsilon = 1e-9);
        let delta: f64 = 0.02;
        let two_sd = vector![2.0 * delta.sqrt(), 0.0];
        assert_abs_diff_eq!(coupling_probability_lower_bound(&two_sd, &z, &i, delta), 0.158_655_253_9, epsilon = 1e-9);
        let b = coupling_probability_lower_bound(&vector![0.1, 0.0], &z, &i, 0.02);
        assert_abs_diff_eq!(b, 0.3618, epsilon = 1e-4);
    }

    #[test]
    fn reflection_needs_gamma_minus_one() {
        let m = reference_ou();
        assert!(BridgeSampler::new(&m, &m, CouplingConfig::projection(), CrossingCriterion::reflection()).is_err());
        assert!(BridgeSampler::new(&m, &m, CouplingConfig::reflection(), CrossingCriterion::reflection()).is_ok());
        assert!(CrossingCriterion::general(-0.1).is_err());
        assert_abs_diff_eq!(CrossingCriterion::default_for_step(0.02).proximity, 0.05);
        assert_abs_diff_eq!(CrossingCriterion::default_for_step(0.08).proximity, 0.1);
    }

    #[test]
    fn reversed_increments_of_constant_brownian_path() {
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let path = SamplePath::new(grid, vec![vector![2.0, -1.0]; 6]).unwrap();
        let inc = reversed_increments(&path, &FnModel::<2>::brownian()).unwrap();
        assert!(inc.as_slice().iter().all(|w| *w == State::<2>::zeros()));
    }

    #[test]
    fn reversed_increments_two_step_ou() {
        let ou = OrnsteinUhlenbeck::new(vector![0.0], matrix![1.0], matrix![1.0]).unwrap();
        let grid = TimeGrid::new(0.2, 2).unwrap();
        let path = SamplePath::new(grid, vec![vector![1.0], vector![0.5], vector![0.2]]).unwrap();
        let inc = reversed_increments(&path, &ou).unwrap();
        // y1 - y2 + 0.1 y2 and y0 - y1 + 0.1 y1
        assert_abs_diff_eq!(inc.get(1)[0], 0.32, epsilon = 1e-15);
        assert_abs_diff_eq!(inc.get(2)[0], 0.55, epsilon = 1e-15);
    }

    #[test]
    fn reversed_increments_approach_negated_forward_noise() {
        let ou = reference_ou();
        let corr = |steps: usize| {
            let grid = TimeGrid::new(1.0, steps).unwrap();
            let mut rng = replicate_rng(3, steps as u64);
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for _ in 0..200 {
                let (path, noise) = simulate_path(&ou, &State::zeros(), &grid, &mut rng).unwrap();
                let rev = reversed_increments(&path, &ou).unwrap();
                for i in 1..=steps {
                    let (a, b) = (rev.get(i)[0], noise.get(steps - i + 1)[0]);
                    sxy += a * b;
                    sxx += a * a;
                    syy += b * b;
                }
            }
            sxy / (sxx * syy).sqrt()
        };
        let coarse = corr(10);
        let fine = corr(1000);
        assert!(fine < coarse, "coarse {coarse} fine {fine}");
        assert!(fine < -0.99, "fine {fine}");
    }

    #[test]
    fn coupled_start_follows_reversed_path() {
        let m = OrnsteinUhlenbeck::new(vector![0.0], matrix![1.0], matrix![1.0]).unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let y_star = SamplePath::new(grid, vec![vector![0.3]; 21]).unwrap();
        let mut rng = replicate_rng(1, 0);
        let (fwd, _) = simulate_coupled_forward(&y_star, &vector![0.3], &m, &CouplingConfig::reflection(), &mut rng).unwrap();
        assert!(fwd.states().iter().all(|s| *s == vector![0.3]));
    }

    #[test]
    fn coupled_forward_has_forward_law() {
        // W^rev is a Wiener process only when the reversed path is
        // stationary, so b is drawn from the invariant law each time
        let ou = reference_ou();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let a = vector![0.5, -0.5];
        let chol = ou.stationary_covariance().cholesky().unwrap().l();
        let n = 20_000;
        let mut rng = replicate_rng(21, 0);
        let mut coupled = Vec::with_capacity(n);
        let mut plain = Vec::with_capacity(n);
        let cfg = CouplingConfig::with_gamma(0.5).unwrap();
        for _ in 0..n {
            let b = chol * crate::sde::wiener_increment::<2, _>(&mut rng, 1.0);
            let (y_star, _) = simulate_path(&ou, &b, &grid, &mut rng).unwrap();
            let (fwd, _) = simulate_coupled_forward(&y_star, &a, &ou, &cfg, &mut rng).unwrap();
            coupled.push(*fwd.state(25));
            plain.push(*simulate_path(&ou, &a, &grid, &mut rng).unwrap().0.state(25));
        }
        for j in 0..2 {
            let stats = |v: &[State<2>]| {
                let m = v.iter().map(|s| s[j]).sum::<f64>() / n as f64;
                let var = v.iter().map(|s| (s[j] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                (m, var)
            };
            let (m1, v1) = stats(&coupled);
            let (m2, v2) = stats(&plain);
            let se_m = ((v1 + v2) / n as f64).sqrt();
            assert!((m1 - m2).abs() < 4.0 * se_m, "mean {j}: {m1} vs {m2}");
            let se_v = ((v1 * v1 + v2 * v2) * 2.0 / n as f64).sqrt();
            assert!((v1 - v2).abs() < 4.0 * se_v, "var {j}: {v1} vs {v2}");
        }
    }

    #[test]
    fn accepted_bridges_are_pinned_and_replayable() {
        let ou = reference_ou();
        let spec = BridgeSpec::new(vector![0.2, -0.1], vector![0.4, 0.3], 1.0, 50).unwrap();
        for (cfg, crit) in [
            (CouplingConfig::reflection(), CrossingCriterion::reflection()),
            (CouplingConfig::with_gamma(0.5).unwrap(), CrossingCriterion::default_for_step(0.02)),
        ] {
            let sampler = BridgeSampler::new(&ou, &ou, cfg, crit).unwrap();
            let mut rng = replicate_rng(5, 0);
            for _ in 0..50 {
                let br = sampler.sample(&spec, &mut rng).unwrap();
                let z = br.path().states();
                let rho = br.coupling_index();
                assert_eq!(z[0], *spec.start());
                assert_eq!(z[50], *spec.end());
                assert!((1..=50).contains(&rho));
                assert!(br.attempts() >= 1);
                let inc = br.driving_increments().as_slice();
                assert_eq!(inc.len(), 50);
                let head = replay(&ou, &z[0], spec.grid(), &inc[..rho - 1]);
                assert_eq!(&head[..], &z[..rho]);
                let tail = replay(&ou, &z[rho], spec.grid(), &inc[rho..]);
                for (k, s) in tail.iter().enumerate() {
                    assert!((s - z[rho + k]).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn reversed_model_is_used_for_y_star() {
        // non-reversible OU: the sampler must accept a reversed model
        // distinct from the forward one
        let ou = OrnsteinUhlenbeck::new(State::zeros(), matrix![1.0, 1.0; 0.0, 1.0], Matrix::identity()).unwrap();
        let rev = ReversedModel::new::<2>(&ou).unwrap();
        let spec = BridgeSpec::new(vector![0.0, 0.0], vector![0.5, 0.0], 1.0, 50).unwrap();
        let sampler = BridgeSampler::new(&ou, &rev, CouplingConfig::reflection(), CrossingCriterion::reflection()).unwrap();
        let br = sampler.sample(&spec, &mut replicate_rng(2, 0)).unwrap();
        assert_eq!(*br.path().last(), vector![0.5, 0.0]);
    }

    #[test]
    fn exhaustion_reports_budget() {
        let ou = reference_ou();
        let spec = BridgeSpec::new(vector![5.0, -5.0], vector![-5.0, 5.0], 1.0, 10).unwrap();
        let crit = CrossingCriterion::general(1e-9).unwrap();
        let err = BridgeSampler::new(&ou, &ou, CouplingConfig::projection(), crit)
            .unwrap()
            .with_max_attempts(3)
            .unwrap()
            .sample(&spec, &mut replicate_rng(0, 0))
            .unwrap_err();
        assert!(matches!(err, Error::BridgeExhausted { attempts: 3 }));
    }

    #[test]
    fn spec_guards() {
        assert!(BridgeSpec::new(vector![0.0], vector![0.0], 1.0, 1).is_err());
        assert!(BridgeSpec::new(vector![f64::NAN], vector![0.0], 1.0, 5).is_err());
    }

    #[test]
    fn seeded_sampling_is_bit_identical() {
        let ou = reference_ou();
        let spec = BridgeSpec::new(State::zeros(), State::zeros(), 1.0, 50).unwrap();
        let sampler = BridgeSampler::new(&ou, &ou, CouplingConfig::reflection(), CrossingCriterion::reflection()).unwrap();
        let a = sampler.sample(&spec, &mut replicate_rng(9, 4)).unwrap();
        let b = sampler.sample(&spec, &mut replicate_rng(9, 4)).unwrap();
        assert_eq!(a, b);
    }
}
