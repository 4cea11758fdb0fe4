use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::sde::{Diffusion, Matrix, State};

/// Unit-diffusion model with drift `-alpha x / sqrt(1 + |x|^2)`.
///
/// Its invariant law has density proportional to `exp(-2 alpha sqrt(1 + |x|^2))`
/// and the process is reversible, so it is its own time reversal.
#[derive(Debug, Clone, Copy)]
pub struct HyperbolicModel<const D: usize> {
    alpha: f64,
    log_norm: f64,
}

impl<const D: usize> HyperbolicModel<D> {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha, log_norm: log_normalizer(alpha, D)? })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl<const D: usize> Diffusion<D> for HyperbolicModel<D> {
    fn drift(&self, x: &State<D>) -> State<D> {
        hyperbolic_drift(x, self.alpha)
    }
    fn diffusion(&self, _x: &State<D>) -> Matrix<D> {
        Matrix::identity()
    }
    fn diffusion_inverse(&self, _x: &State<D>) -> Option<Matrix<D>> {
        Some(Matrix::identity())
    }
    fn covariance(&self, _x: &State<D>) -> Matrix<D> {
        Matrix::identity()
    }
    fn covariance_inverse(&self, _x: &State<D>) -> Option<Matrix<D>> {
        Some(Matrix::identity())
    }
    fn log_invariant_density(&self, x: &State<D>) -> Option<f64> {
        Some(self.log_norm - 2.0 * self.alpha * (1.0 + x.norm_squared()).sqrt())
    }
    fn reversed_drift(&self, x: &State<D>) -> Option<State<D>> {
        Some(hyperbolic_drift(x, self.alpha))
    }
}

pub fn hyperbolic_drift<const D: usize>(x: &State<D>, alpha: f64) -> State<D> {
    x * (-alpha / (1.0 + x.norm_squared()).sqrt())
}

fn log_normalizer(alpha: f64, d: usize) -> Result<f64> {
    if !(1..=3).contains(&d) {
        return Err(Error::Unsupported(format!(
            "hyperbolic invariant density is implemented for dimensions 1 to 3, got {d}"
        )));
    }
    let half = (d as f64 - 1.0) / 2.0;
    let order = (d as f64 + 1.0) / 2.0;
    Ok(half * (alpha / PI).ln() - (2.0 * bessel_k(order, 2.0 * alpha)).ln())
}

/// Log invariant density of the hyperbolic model in dimension `d` (1 to 3).
pub fn hyperbolic_log_density(x: &[f64], alpha: f64, d: usize) -> Result<f64> {
    if x.len() != d {
        return Err(Error::invalid(format!("point has {} coordinates, expected {d}", x.len())));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok(log_normalizer(alpha, d)? - 2.0 * alpha * (1.0 + r2).sqrt())
}

/// Modified Bessel function of the second kind `K_nu(x)` for `x > 0`.
///
/// Half-integer orders up to 5/2 use the closed form; other orders use
/// `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt` with the trapezoid
/// rule, which converges geometrically for this analytic, rapidly decaying
/// integrand.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k needs x > 0");
    let nu = nu.abs();
    let base = (PI / (2.0 * x)).sqrt() * (-x).exp();
    if nu == 0.5 {
        return base;
    }
    if nu == 1.5 {
        return base * (1.0 + 1.0 / x);
    }
    if nu == 2.5 {
        return base * (1.0 + 3.0 / x + 3.0 / (x * x));
    }
    bessel_k_integral(nu, x)
}

fn bessel_k_integral(nu: f64, x: f64) -> f64 {
    // scale by exp(x) so the integrand starts at 1
    let f = |t: f64| (-x * (t.cosh() - 1.0) + nu * t).exp() * 0.5 * (1.0 + (-2.0 * nu * t).exp());
    let h = 1e-3;
    let mut sum = 0.5 * f(0.0);
    let mut t = h;
    loop {
        let v = f(t);
        sum += v;
        if v < 1e-18 * sum && t > 1.0 {
            break;
        }
        t += h;
    }
    sum * h * (-x).exp()
}
