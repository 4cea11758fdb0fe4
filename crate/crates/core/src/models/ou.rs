use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::linalg::{expm, from_dyn, is_stable, symmetrize, to_dyn};
use crate::error::{Error, Result};
use crate::sde::{Diffusion, Matrix, SamplePath, State, TimeGrid};

/// `dX = -B (X - A) dt + sigma dW` with a stable drift matrix `B`.
#[derive(Debug, Clone)]
pub struct OrnsteinUhlenbeck<const D: usize> {
    mean: State<D>,
    drift_matrix: Matrix<D>,
    sigma: Matrix<D>,
    sigma_inv: Matrix<D>,
    v: Matrix<D>,
    v_inv: Matrix<D>,
    gamma: Matrix<D>,
    gamma_inv: Matrix<D>,
    reversed_matrix: Matrix<D>,
    log_norm: f64,
}

impl<const D: usize> OrnsteinUhlenbeck<D> {
    pub fn new(mean: State<D>, drift_matrix: Matrix<D>, sigma: Matrix<D>) -> Result<Self> {
        let sigma_inv = sigma.try_inverse().ok_or(Error::Singular("sigma"))?;
        let v = sigma * sigma.transpose();
        let gamma = ou_stationary_covariance(&drift_matrix, &v)?;
        let gamma_inv = gamma.try_inverse().ok_or(Error::Singular("stationary covariance"))?;
        let log_det = 2.0 * gamma
            .cholesky()
            .ok_or(Error::Singular("stationary covariance"))?
            .l()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
        Ok(Self {
            mean,
            drift_matrix,
            sigma,
            sigma_inv,
            v,
            v_inv: sigma_inv.transpose() * sigma_inv,
            gamma,
            gamma_inv,
            reversed_matrix: gamma * drift_matrix.transpose() * gamma_inv,
            log_norm: -0.5 * (D as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    pub fn mean(&self) -> &State<D> {
        &self.mean
    }

    pub fn drift_matrix(&self) -> &Matrix<D> {
        &self.drift_matrix
    }

    pub fn sigma(&self) -> &Matrix<D> {
        &self.sigma
    }

    /// `V = sigma sigma^T`.
    pub fn v(&self) -> &Matrix<D> {
        &self.v
    }

    /// Covariance of the invariant normal law.
    pub fn stationary_covariance(&self) -> &Matrix<D> {
        &self.gamma
    }

    /// Drift matrix of the time-reversed process: `Gamma B^T Gamma^-1`.
    pub fn reversed_drift_matrix(&self) -> &Matrix<D> {
        &self.reversed_matrix
    }

    pub fn is_reversible(&self) -> bool {
        ou_is_reversible(&self.drift_matrix, &self.v).unwrap_or(false)
    }

    /// Law of the `(x0, x, horizon)`-bridge at time `t`.
    pub fn bridge_marginal(
        &self,
        x0: &State<D>,
        x: &State<D>,
        t: f64,
        horizon: f64,
    ) -> Result<(State<D>, Matrix<D>)> {
        let (m, c) = ou_bridge_marginal(
            &self.drift_matrix,
            &self.v,
            &(x0 - self.mean),
            &(x - self.mean),
            t,
            horizon,
        )?;
        Ok((m + self.mean, c))
    }

    pub fn exact_bridge(&self, grid: &TimeGrid) -> Result<OuExactBridge<D>> {
        OuExactBridge::new(&self.drift_matrix, &self.v, grid).map(|b| b.with_mean(self.mean))
    }
}

impl<const D: usize> Diffusion<D> for OrnsteinUhlenbeck<D> {
    fn drift(&self, x: &State<D>) -> State<D> {
        -(self.drift_matrix * (x - self.mean))
    }
    fn diffusion(&self, _x: &State<D>) -> Matrix<D> {
        self.sigma
    }
    fn diffusion_inverse(&self, _x: &State<D>) -> Option<Matrix<D>> {
        Some(self.sigma_inv)
    }
    fn covariance(&self, _x: &State<D>) -> Matrix<D> {
        self.v
    }
    fn covariance_inverse(&self, _x: &State<D>) -> Option<Matrix<D>> {
        Some(self.v_inv)
    }
    fn log_invariant_density(&self, x: &State<D>) -> Option<f64> {
        let y = x - self.mean;
        Some(self.log_norm - 0.5 * y.dot(&(self.gamma_inv * y)))
    }
    fn reversed_drift(&self, x: &State<D>) -> Option<State<D>> {
        Some(-(self.reversed_matrix * (x - self.mean)))
    }
}

/// Stationary covariance: the symmetric solution of `B G + G B^T = V`.
pub fn ou_stationary_covariance<const D: usize>(b: &Matrix<D>, v: &Matrix<D>) -> Result<Matrix<D>> {
    if !is_stable(b) {
        return Err(Error::UnstableDrift);
    }
    // vec(B G + G B^T) = (I (x) B + B (x) I) vec(G) for column-major vec
    let bd = to_dyn(b);
    let eye = DMatrix::<f64>::identity(D, D);
    let system = eye.kronecker(&bd) + bd.kronecker(&eye);
    let rhs = DMatrix::from_column_slice(D * D, 1, v.as_slice());
    let sol = system.lu().solve(&rhs).ok_or(Error::Singular("Lyapunov operator"))?;
    Ok(symmetrize(&Matrix::<D>::from_column_slice(sol.as_slice())))
}

/// `Gamma_t = int_0^t exp(-sB) V exp(-sB^T) ds`.
///
/// Evaluated with the block-exponential construction on a short interval
/// `h = t / 2^k` and then doubled `k` times via
/// `Gamma_{2h} = Gamma_h + exp(-hB) Gamma_h exp(-hB^T)`.
pub fn ou_gamma_t<const D: usize>(b: &Matrix<D>, v: &Matrix<D>, t: f64) -> Result<Matrix<D>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("time must be non-negative, got {t}")));
    }
    if t == 0.0 {
        return Ok(Matrix::zeros());
    }
    let scale = b.norm() * t;
    let mut k = 0u32;
    while scale / 2f64.powi(k as i32) > 0.5 && k < 60 {
        k += 1;
    }
    let h = t / 2f64.powi(k as i32);

    // exp(h [[-B, V], [0, B^T]]) = [[exp(-hB), F], [0, exp(hB^T)]] and
    // Gamma_h = F exp(hB^T)^-1 = F exp(-hB)^T.
    let mut block = DMatrix::<f64>::zeros(2 * D, 2 * D);
    block.view_mut((0, 0), (D, D)).copy_from(&to_dyn(&(-b * h)));
    block.view_mut((0, D), (D, D)).copy_from(&to_dyn(&(v * h)));
    block.view_mut((D, D), (D, D)).copy_from(&to_dyn(&(b.transpose() * h)));
    let e = block.exp();
    let mut decay: Matrix<D> = from_dyn(&e.view((0, 0), (D, D)).into_owned());
    let f: Matrix<D> = from_dyn(&e.view((0, D), (D, D)).into_owned());
    let mut gamma = symmetrize(&(f * decay.transpose()));
    for _ in 0..k {
        gamma += decay * gamma * decay.transpose();
        gamma = symmetrize(&gamma);
        decay *= decay;
    }
    Ok(gamma)
}

/// Mean and covariance at time `t` of the OU bridge (mean zero process)
/// from `x0` at time 0 to `x` at time `horizon`.
///
/// Uses the gain `Gamma_t exp(-B^T (T - t)) Gamma_T^-1`, which is the
/// Gaussian-conditioning gain for any stable `B` and coincides with
/// `exp(-B (T - t)) Gamma_t Gamma_T^-1` when `B^-1 V` is symmetric.
pub fn ou_bridge_marginal<const D: usize>(
    b: &Matrix<D>,
    v: &Matrix<D>,
    x0: &State<D>,
    x: &State<D>,
    t: f64,
    horizon: f64,
) -> Result<(State<D>, Matrix<D>)> {
    if !(t > 0.0 && t < horizon) {
        return Err(Error::invalid(format!("bridge time {t} outside (0, {horizon})")));
    }
    let gamma_t = ou_gamma_t(b, v, t)?;
    let gamma_h = ou_gamma_t(b, v, horizon)?;
    let gamma_h_inv = gamma_h.try_inverse().ok_or(Error::Singular("Gamma_T"))?;
    let remaining = expm(&(-b * (horizon - t)));
    let gain = gamma_t * remaining.transpose() * gamma_h_inv;
    let mean = expm(&(-b * t)) * x0 + gain * (x - expm(&(-b * horizon)) * x0);
    let cov = symmetrize(&(gamma_t - gain * remaining * gamma_t));
    Ok((mean, cov))
}

/// Whether the OU process with drift matrix `B` and `V = sigma sigma^T` is
/// time-reversible, i.e. `B^-1 V` is symmetric.
pub fn ou_is_reversible<const D: usize>(b: &Matrix<D>, v: &Matrix<D>) -> Result<bool> {
    let m = b.try_inverse().ok_or(Error::Singular("B"))? * v;
    Ok((m - m.transpose()).norm() <= 1e-12 * m.norm())
}

/// Exact sampler for OU bridges on a fixed grid.
///
/// An unconditioned path is drawn from the Gaussian transitions and then
/// pinned: `Z_i = X_i + G_i (x - X_N)` with `G_i = Gamma_{t_i} exp(-B^T (T - t_i)) Gamma_T^-1`.
#[derive(Debug, Clone)]
pub struct OuExactBridge<const D: usize> {
    grid: TimeGrid,
    mean: State<D>,
    transition: Matrix<D>,
    noise_factor: Matrix<D>,
    gains: Vec<Matrix<D>>,
}

impl<const D: usize> OuExactBridge<D> {
    pub fn new(b: &Matrix<D>, v: &Matrix<D>, grid: &TimeGrid) -> Result<Self> {
        let delta = grid.step_size();
        let gamma_delta = ou_gamma_t(b, v, delta)?;
        let noise_factor = gamma_delta
            .cholesky()
            .ok_or(Error::Singular("Gamma_delta"))?
            .l();
        let horizon = grid.horizon();
        let gamma_h_inv = ou_gamma_t(b, v, horizon)?
            .try_inverse()
            .ok_or(Error::Singular("Gamma_T"))?;
        let gains = (0..=grid.steps())
            .map(|i| {
                let t = grid.time(i);
                Ok(ou_gamma_t(b, v, t)? * expm(&(-b * (horizon - t))).transpose() * gamma_h_inv)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: *grid,
            mean: State::zeros(),
            transition: expm(&(-b * delta)),
            noise_factor,
            gains,
        })
    }

    fn with_mean(mut self, mean: State<D>) -> Self {
        self.mean = mean;
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn sample<R: Rng + ?Sized>(&self, x0: &State<D>, x: &State<D>, rng: &mut R) -> SamplePath<D> {
        let mut noise = Vec::with_capacity(self.grid.steps());
        for _ in 0..self.grid.steps() {
            noise.push(State::<D>::from_fn(|_, _| rng.sample(StandardNormal)));
        }
        self.sample_with_noise(x0, x, &noise)
    }

    /// Deterministic construction from `N` standard-normal vectors.
    pub fn sample_with_noise(&self, x0: &State<D>, x: &State<D>, noise: &[State<D>]) -> SamplePath<D> {
        assert_eq!(noise.len(), self.grid.steps(), "one noise vector per step");
        let start = x0 - self.mean;
        let target = x - self.mean;
        let mut free = Vec::with_capacity(noise.len() + 1);
        free.push(start);
        let mut cur = start;
        for z in noise {
            cur = self.transition * cur + self.noise_factor * z;
            free.push(cur);
        }
        let miss = target - cur;
        let n = self.grid.steps();
        let states = free
            .iter()
            .zip(&self.gains)
            .enumerate()
            .map(|(i, (xi, g))| match i {
                0 => *x0,
                _ if i == n => *x,
                _ => xi + g * miss + self.mean,
            })
            .collect();
        SamplePath::new(self.grid, states).expect("grid-sized path")
    }
}

/// One exact OU bridge path (mean-zero process) from `x0` to `x` on `grid`.
pub fn ou_exact_bridge_sample<const D: usize, R: Rng + ?Sized>(
    b: &Matrix<D>,
    v: &Matrix<D>,
    x0: &State<D>,
    x: &State<D>,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<SamplePath<D>> {
    Ok(OuExactBridge::new(b, v, grid)?.sample(x0, x, rng))
}
