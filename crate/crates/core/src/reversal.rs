//! Time reversal of stationary diffusions.
//!
//! The stationary version of `dX = alpha dt + sigma dW` run backwards in time
//! is again a diffusion with the same `sigma` and drift
//!
//! ```text
//! alpha*_i(x) = -alpha_i(x) + nu(x)^-1 sum_j d/dx_j (nu(x) V_ij(x))
//!             = -alpha_i(x) + sum_j [V_ij d_j log nu + d_j V_ij]
//! ```
//!
//! The local integrability condition under which this holds is assumed, not
//! checked. It is the model author's responsibility, as is the choice
//! between the various sufficient conditions for its validity.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::sde::{Diffusion, Matrix, State};

/// How the reversed drift is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReversalMode {
    /// The model supplies `alpha*` in closed form.
    Analytic,
    /// `alpha*` is computed from the invariant log-density by finite differences.
    FromDensity,
    /// The model is time-reversible: `alpha* = alpha`.
    Reversible,
}

/// The time-reversed model: drift `alpha*`, diffusion matrix unchanged.
#[derive(Debug, Clone)]
pub struct ReversedModel<M> {
    base: M,
    mode: ReversalMode,
}

impl<M> ReversedModel<M> {
    /// Uses the model's own drift; valid only for time-reversible models.
    pub fn reversible(base: M) -> Self {
        Self {
            base,
            mode: ReversalMode::Reversible,
        }
    }

    pub fn base(&self) -> &M {
        &self.base
    }

    pub fn mode(&self) -> ReversalMode {
        self.mode
    }
}

impl<M> ReversedModel<M> {
    /// Picks the analytic reversed drift when the model has one and falls
    /// back to the invariant density otherwise.
    pub fn new<const D: usize>(base: M) -> Result<Self>
    where
        M: Diffusion<D>,
    {
        let probe = State::<D>::zeros();
        let mode = if base.reversed_drift(&probe).is_some() {
            ReversalMode::Analytic
        } else if base.log_invariant_density(&probe).is_some() {
            ReversalMode::FromDensity
        } else {
            return Err(Error::Unsupported(
                "time reversal needs an analytic reversed drift or an invariant density".into(),
            ));
        };
        Ok(Self { base, mode })
    }

    pub fn with_mode<const D: usize>(base: M, mode: ReversalMode) -> Result<Self>
    where
        M: Diffusion<D>,
    {
        let probe = State::<D>::zeros();
        let ok = match mode {
            ReversalMode::Analytic => base.reversed_drift(&probe).is_some(),
            ReversalMode::FromDensity => base.log_invariant_density(&probe).is_some(),
            ReversalMode::Reversible => true,
        };
        if !ok {
            return Err(Error::Unsupported(format!("model cannot be reversed in mode {mode:?}")));
        }
        Ok(Self { base, mode })
    }
}

impl<const D: usize, M: Diffusion<D>> Diffusion<D> for ReversedModel<M> {
    fn drift(&self, x: &State<D>) -> State<D> {
        match self.mode {
            ReversalMode::Reversible => self.base.drift(x),
            ReversalMode::Analytic => self
                .base
                .reversed_drift(x)
                .expect("analytic reversed drift checked at construction"),
            ReversalMode::FromDensity => drift_from_density(&self.base, x)
                .expect("invariant density checked at construction"),
        }
    }
    fn diffusion(&self, x: &State<D>) -> Matrix<D> {
        self.base.diffusion(x)
    }
    fn diffusion_inverse(&self, x: &State<D>) -> Option<Matrix<D>> {
        self.base.diffusion_inverse(x)
    }
    fn covariance(&self, x: &State<D>) -> Matrix<D> {
        self.base.covariance(x)
    }
    fn covariance_inverse(&self, x: &State<D>) -> Option<Matrix<D>> {
        self.base.covariance_inverse(x)
    }
    fn log_invariant_density(&self, x: &State<D>) -> Option<f64> {
        self.base.log_invariant_density(x)
    }
    fn reversed_drift(&self, x: &State<D>) -> Option<State<D>> {
        Some(self.base.drift(x))
    }
}

/// Central-difference bandwidth for coordinate value `v`.
fn bandwidth(v: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + v.abs())
}

/// Gradient of log nu and row-divergence of V (`sum_j d_j V_ij`) at `x`.
fn density_terms<const D: usize, M: Diffusion<D> + ?Sized>(
    model: &M,
    x: &State<D>,
) -> Option<(State<D>, State<D>)> {
    let mut grad = State::<D>::zeros();
    let mut div = State::<D>::zeros();
    for j in 0..D {
        let h = bandwidth(x[j]);
        let mut plus = *x;
        let mut minus = *x;
        plus[j] += h;
        minus[j] -= h;
        let width = plus[j] - minus[j];
        grad[j] = (model.log_invariant_density(&plus)? - model.log_invariant_density(&minus)?) / width;
        let dv = (model.covariance(&plus) - model.covariance(&minus)) / width;
        for i in 0..D {
            div[i] += dv[(i, j)];
        }
    }
    Some((grad, div))
}

fn drift_from_density<const D: usize, M: Diffusion<D> + ?Sized>(
    model: &M,
    x: &State<D>,
) -> Option<State<D>> {
    let (grad, div) = density_terms(model, x)?;
    Some(-model.drift(x) + model.covariance(x) * grad + div)
}

/// Drift of the time-reversed diffusion at `x`.
pub fn reversed_drift<const D: usize, M: Diffusion<D> + ?Sized>(model: &M, x: &State<D>) -> Result<State<D>> {
    if let Some(a) = model.reversed_drift(x) {
        return Ok(a);
    }
    drift_from_density(model, x).ok_or_else(|| {
        Error::Unsupported("time reversal needs an analytic reversed drift or an invariant density".into())
    })
}

/// Largest absolute component of `alpha - (V grad log nu + div V) / 2` at `x`.
pub fn reversibility_residual<const D: usize, M: Diffusion<D> + ?Sized>(model: &M, x: &State<D>) -> Result<f64> {
    let (grad, div) = density_terms(model, x)
        .ok_or_else(|| Error::Unsupported("reversibility check needs an invariant density".into()))?;
    let r = model.drift(x) - (model.covariance(x) * grad + div) * 0.5;
    Ok(r.amax())
}

/// Residual of the diagonal-V form `alpha_i = d_i(nu V_ii) / (2 nu)`.
pub fn diagonal_reversibility_residual<const D: usize, M: Diffusion<D> + ?Sized>(
    model: &M,
    x: &State<D>,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let alpha = model.drift(x);
    let nu = model
        .log_invariant_density(x)
        .ok_or_else(|| Error::Unsupported("reversibility check needs an invariant density".into()))?
        .exp();
    for i in 0..D {
        let h = bandwidth(x[i]);
        let mut plus = *x;
        let mut minus = *x;
        plus[i] += h;
        minus[i] -= h;
        let f = |y: &State<D>| -> Result<f64> {
            let ld = model
                .log_invariant_density(y)
                .ok_or_else(|| Error::Unsupported("reversibility check needs an invariant density".into()))?;
            Ok(ld.exp() * model.covariance(y)[(i, i)])
        };
        let d = (f(&plus)? - f(&minus)?) / (plus[i] - minus[i]);
        worst = worst.max((alpha[i] - 0.5 * d / nu).abs());
    }
    Ok(worst)
}

/// Numerical certificate of time-reversibility: the residual is below `tol`
/// at every probe point.
pub fn is_time_reversible<const D: usize, M: Diffusion<D> + ?Sized>(
    model: &M,
    probe_points: &[State<D>],
    tol: f64,
) -> Result<bool> {
    for x in probe_points {
        if reversibility_residual(model, x)? >= tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Latin-hypercube sample of `n` points in the box `[lower, upper]`.
pub fn latin_hypercube<const D: usize, R: Rng + ?Sized>(
    lower: &State<D>,
    upper: &State<D>,
    n: usize,
    rng: &mut R,
) -> Vec<State<D>> {
    let mut points = vec![State::<D>::zeros(); n];
    let mut strata: Vec<usize> = (0..n).collect();
    for k in 0..D {
        strata.shuffle(rng);
        for (p, &s) in points.iter_mut().zip(&strata) {
            let frac = (s as f64 + rng.random::<f64>()) / n as f64;
            p[k] = lower[k] + frac * (upper[k] - lower[k]);
        }
    }
    points
}

/// The default probe set: 64 Latin-hypercube points.
pub fn default_probe_points<const D: usize, R: Rng + ?Sized>(
    lower: &State<D>,
    upper: &State<D>,
    rng: &mut R,
) -> Vec<State<D>> {
    latin_hypercube(lower, upper, 64, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{HyperbolicModel, OrnsteinUhlenbeck};
    use crate::rng::replicate_rng;
    use crate::sde::FnModel;
    use approx::assert_abs_diff_eq;
    use nalgebra::{matrix, vector};

    fn probes<const D: usize>() -> Vec<State<D>> {
        default_probe_points(&State::from_element(-2.0), &State::from_element(2.0), &mut replicate_rng(3, 0))
    }

    /// OU given only through drift and log-density, forcing the finite-difference path.
    fn density_only_ou(b: Matrix<2>) -> FnModel<2> {
        let ou = OrnsteinUhlenbeck::new(State::zeros(), b, Matrix::identity()).unwrap();
        let gamma_inv = ou.stationary_covariance().try_inverse().unwrap();
        FnModel::new(move |x| -b * x, |_| Matrix::identity())
            .with_log_density(move |x| -0.5 * x.dot(&(gamma_inv * x)))
    }

    #[test]
    fn reversible_ou_reverses_to_itself() {
        let b = matrix![1.5, 1.0; 1.0, 1.5];
        let m = density_only_ou(b);
        for x in probes::<2>() {
            let a = reversed_drift(&m, &x).unwrap();
            assert_abs_diff_eq!(a, -b * x, epsilon = 1e-7);
        }
        assert!(is_time_reversible(&m, &probes(), 1e-6).unwrap());
    }

    #[test]
    fn general_ou_reversed_drift_matches_closed_form() {
        let b = matrix![1.0, 1.0; 0.0, 1.0];
        let m = density_only_ou(b);
        let ou = OrnsteinUhlenbeck::new(State::zeros(), b, Matrix::identity()).unwrap();
        for x in probes::<2>() {
            let fd = reversed_drift(&m, &x).unwrap();
            let exact = ou.reversed_drift(&x).unwrap();
            assert_abs_diff_eq!(fd, exact, epsilon = 1e-7);
        }
        assert!(!is_time_reversible(&m, &probes(), 1e-6).unwrap());
    }

    #[test]
    fn hyperbolic_is_self_reversed() {
        let m = HyperbolicModel::<2>::new(0.8).unwrap();
        let density_only = FnModel::<2>::new(move |x| m.drift(x), |_| Matrix::identity())
            .with_log_density(move |x| m.log_invariant_density(x).unwrap());
        assert!(is_time_reversible(&density_only, &probes(), 1e-6).unwrap());
        for x in probes::<2>() {
            assert_abs_diff_eq!(reversed_drift(&density_only, &x).unwrap(), m.drift(&x), epsilon = 1e-7);
        }
    }

    #[test]
    fn missing_density_is_unsupported() {
        let m = FnModel::<2>::new(|x| -x, |_| Matrix::identity());
        assert!(matches!(reversed_drift(&m, &State::zeros()), Err(Error::Unsupported(_))));
        assert!(matches!(is_time_reversible(&m, &probes(), 1e-6), Err(Error::Unsupported(_))));
        assert!(ReversedModel::new(&m).is_err());
    }

    #[test]
    fn diagonal_shortcut_agrees() {
        // state-dependent diagonal V with a matching reversible drift:
        // V = diag(1 + x1^2, 2), nu ~ exp(-x1^2 - x2^2) / (1 + x1^2)
        let m = FnModel::<2>::new(
            |x| vector![-(1.0 + x[0] * x[0]) * x[0], -2.0 * x[1]],
            |x| matrix![(1.0 + x[0] * x[0]).sqrt(), 0.0; 0.0, 2.0f64.sqrt()],
        )
        .with_log_density(|x| -x[0] * x[0] - x[1] * x[1] - (1.0 + x[0] * x[0]).ln());
        for x in probes::<2>() {
            let general = reversibility_residual(&m, &x).unwrap();
            let simple = diagonal_reversibility_residual(&m, &x).unwrap();
            assert!(general < 1e-7 && simple < 1e-7, "{general} {simple}");
        }
    }

    #[test]
    fn reversing_a_reversible_model_is_an_involution() {
        let ou = OrnsteinUhlenbeck::new(State::zeros(), matrix![1.5, 1.0; 1.0, 1.5], Matrix::identity()).unwrap();
        let rev = ReversedModel::new(&ou).unwrap();
        let back = ReversedModel::with_mode(&rev, ReversalMode::FromDensity).unwrap();
        for x in probes::<2>() {
            assert_abs_diff_eq!(back.drift(&x), ou.drift(&x), epsilon = 1e-7);
        }
    }

    #[test]
    fn latin_hypercube_strata() {
        let pts = latin_hypercube(&vector![0.0, -1.0], &vector![1.0, 1.0], 10, &mut replicate_rng(1, 1));
        for k in 0..2 {
            let lo = [0.0, -1.0][k];
            let w = [0.1, 0.2][k];
            let mut cells: Vec<usize> = pts.iter().map(|p| ((p[k] - lo) / w) as usize).collect();
            cells.sort();
            assert_eq!(cells, (0..10).collect::<Vec<_>>());
        }
    }
}
