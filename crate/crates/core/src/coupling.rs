//! The gamma-family of Wiener-process couplings.
//!
//! Given states `x` (driven by `W`) and `x'`, the coupled increment is
//!
//! ```text
//! dW' = {I - (1 - gamma) Pi(x, x')} O(x, x') dW + sqrt(1 - gamma^2) u(x, x') dB
//! ```
//!
//! where `u` is the unit vector with `sigma(x') u` pointing from `x'` to `x`,
//! `Pi = u u^T`, and `O` is the orthogonal polar factor of
//! `sigma(x)^T sigma(x')` (or the identity when the correction is off).
//! `gamma = -1` is coupling by reflection and `gamma = 0` coupling by
//! projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::{Diffusion, Matrix, State};

/// Coupling parameter `gamma` in `[-1, 1)` and the orthogonal-correction
/// policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCouplingConfig", into = "RawCouplingConfig")]
pub struct CouplingConfig {
    gamma: f64,
    orthogonal_correction: bool,
    noise_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct RawCouplingConfig {
    gamma: f64,
    #[serde(default)]
    orthogonal_correction: bool,
}

impl TryFrom<RawCouplingConfig> for CouplingConfig {
    type Error = Error;
    fn try_from(raw: RawCouplingConfig) -> Result<Self> {
        Self::new(raw.gamma, raw.orthogonal_correction)
    }
}

impl From<CouplingConfig> for RawCouplingConfig {
    fn from(c: CouplingConfig) -> Self {
        Self {
            gamma: c.gamma,
            orthogonal_correction: c.orthogonal_correction,
        }
    }
}

impl CouplingConfig {
    pub fn new(gamma: f64, orthogonal_correction: bool) -> Result<Self> {
        if !(-1.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma must lie in [-1, 1), got {gamma}")));
        }
        Ok(Self {
            gamma,
            orthogonal_correction,
            // (1 - g)(1 + g) keeps precision near |g| = 1
            noise_scale: ((1.0 - gamma) * (1.0 + gamma)).sqrt(),
        })
    }

    /// Coupling with `O = I`.
    pub fn with_gamma(gamma: f64) -> Result<Self> {
        Self::new(gamma, false)
    }

    pub fn reflection() -> Self {
        Self::with_gamma(-1.0).unwrap()
    }

    pub fn projection() -> Self {
        Self::with_gamma(0.0).unwrap()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn orthogonal_correction(&self) -> bool {
        self.orthogonal_correction
    }

    /// `sqrt(1 - gamma^2)`.
    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }
}

/// States closer than this are treated as already coupled.
pub fn coincident<const D: usize>(x: &State<D>, x_prime: &State<D>) -> bool {
    (x - x_prime).norm() <= 1e-14 * (1.0 + x.norm())
}

/// Unit vector `sigma(x')^-1 (x - x') / |sigma(x')^-1 (x - x')|`.
pub fn coupling_direction<const D: usize>(
    x: &State<D>,
    x_prime: &State<D>,
    sigma_at_x_prime: &Matrix<D>,
) -> Result<State<D>> {
    let inv = sigma_at_x_prime
        .try_inverse()
        .ok_or(Error::Singular("sigma(x')"))?;
    direction_from_inverse(x, x_prime, &inv)
}

pub(crate) fn direction_from_inverse<const D: usize>(
    x: &State<D>,
    x_prime: &State<D>,
    sigma_inv_at_x_prime: &Matrix<D>,
) -> Result<State<D>> {
    if coincident(x, x_prime) {
        return Err(Error::DegenerateDirection);
    }
    let v = sigma_inv_at_x_prime * (x - x_prime);
    let norm = v.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateDirection);
    }
    Ok(v / norm)
}

/// `Pi = u u^T`, the orthogonal projection onto span(u).
pub fn projection_matrix<const D: usize>(u: &State<D>) -> Matrix<D> {
    u * u.transpose()
}

/// `H = I - 2 u u^T`, reflection in the hyperplane orthogonal to `u`.
pub fn reflection_matrix<const D: usize>(u: &State<D>) -> Matrix<D> {
    Matrix::identity() - projection_matrix(u) * 2.0
}

/// Closest orthogonal matrix (in Frobenius norm) to `sigma(x)^T sigma(x')`,
/// i.e. `A B^T` for the SVD `A S B^T`.
pub fn orthogonal_correction<const D: usize>(
    sigma_at_x: &Matrix<D>,
    sigma_at_x_prime: &Matrix<D>,
) -> Result<Matrix<D>> {
    let product = sigma_at_x.transpose() * sigma_at_x_prime;
    let svd = crate::models::linalg::to_dyn(&product).svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        return Err(Error::AmbiguousPolarFactor);
    }
    let (Some(a), Some(bt)) = (svd.u, svd.v_t) else {
        return Err(Error::AmbiguousPolarFactor);
    };
    Ok(crate::models::linalg::from_dyn(&(a * bt)))
}

/// Geometry of the coupling at a pair of states, reused by the forward map
/// and its inverse.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CouplingFrame<const D: usize> {
    pub u: State<D>,
    pub rotation: Option<Matrix<D>>,
}

impl<const D: usize> CouplingFrame<D> {
    pub fn at<M: Diffusion<D> + ?Sized>(
        model: &M,
        x: &State<D>,
        x_prime: &State<D>,
        cfg: &CouplingConfig,
        index: usize,
    ) -> Result<Self> {
        let inv = model
            .diffusion_inverse(x_prime)
            .ok_or(Error::SingularDiffusion { index })?;
        let u = direction_from_inverse(x, x_prime, &inv)?;
        let rotation = if cfg.orthogonal_correction {
            Some(orthogonal_correction(&model.diffusion(x), &model.diffusion(x_prime))?)
        } else {
            None
        };
        Ok(Self { u, rotation })
    }

    /// `{I - (1-g) Pi} O dw + sqrt(1-g^2) u db`.
    pub fn forward(&self, cfg: &CouplingConfig, dw: &State<D>, db: f64) -> State<D> {
        let w = match &self.rotation {
            Some(o) => o * dw,
            None => *dw,
        };
        let along = self.u.dot(&w);
        w + self.u * (cfg.noise_scale * db - (1.0 - cfg.gamma) * along)
    }

    /// `O^T [{I - (1-g) Pi} dw' + sqrt(1-g^2) u du]`: recovers the increment
    /// driving `x` from the one driving `x'`.
    pub fn inverse(&self, cfg: &CouplingConfig, dw_prime: &State<D>, du: f64) -> State<D> {
        let along = self.u.dot(dw_prime);
        let v = dw_prime + self.u * (cfg.noise_scale * du - (1.0 - cfg.gamma) * along);
        match &self.rotation {
            Some(o) => o.transpose() * v,
            None => v,
        }
    }

    /// The independent noise `du` for which `inverse(forward(dw, db), du)`
    /// returns `dw`: `sqrt(1-g^2) u^T O dw - g db`.
    pub fn complementary_noise(&self, cfg: &CouplingConfig, dw: &State<D>, db: f64) -> f64 {
        let w = match &self.rotation {
            Some(o) => o * dw,
            None => *dw,
        };
        cfg.noise_scale * self.u.dot(&w) - cfg.gamma * db
    }
}

/// The coupled increment `dW'` for the pair `(x, x')`.
pub fn coupled_increment<const D: usize, M: Diffusion<D> + ?Sized>(
    dw: &State<D>,
    db: f64,
    x: &State<D>,
    x_prime: &State<D>,
    model: &M,
    cfg: &CouplingConfig,
) -> Result<State<D>> {
    Ok(CouplingFrame::at(model, x, x_prime, cfg, 0)?.forward(cfg, dw, db))
}

/// Inverse of [`coupled_increment`]: the increment driving `x` given the one
/// driving `x'` and independent noise `du`.
pub fn inverse_coupled_increment<const D: usize, M: Diffusion<D> + ?Sized>(
    dw_prime: &State<D>,
    du: f64,
    x: &State<D>,
    x_prime: &State<D>,
    model: &M,
    cfg: &CouplingConfig,
) -> Result<State<D>> {
    Ok(CouplingFrame::at(model, x, x_prime, cfg, 0)?.inverse(cfg, dw_prime, du))
}

/// The `du` for which [`inverse_coupled_increment`] undoes
/// [`coupled_increment`] with noise `db`.
pub fn complementary_noise<const D: usize, M: Diffusion<D> + ?Sized>(
    dw: &State<D>,
    db: f64,
    x: &State<D>,
    x_prime: &State<D>,
    model: &M,
    cfg: &CouplingConfig,
) -> Result<f64> {
    Ok(CouplingFrame::at(model, x, x_prime, cfg, 0)?.complementary_noise(cfg, dw, db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replicate_rng;
    use crate::sde::FnModel;
    use approx::assert_abs_diff_eq;
    use nalgebra::{matrix, vector, Rotation2};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn direction_examples() {
        let x = vector![3.0, 4.0];
        let xp = State::<2>::zeros();
        let u = coupling_direction(&x, &xp, &Matrix::identity()).unwrap();
        assert_abs_diff_eq!(u, vector![0.6, 0.8], epsilon = 1e-15);
        let u = coupling_direction(&x, &xp, &(Matrix::identity() * 2.0)).unwrap();
        assert_abs_diff_eq!(u, vector![0.6, 0.8], epsilon = 1e-15);
        let u = coupling_direction(&vector![1.0, 2.0], &xp, &matrix![1.0, 0.0; 0.0, 2.0]).unwrap();
        let r = 0.5f64.sqrt();
        assert_abs_diff_eq!(u, vector![r, r], epsilon = 1e-15);
    }

    #[test]
    fn coincident_states_are_degenerate() {
        let x = vector![1.0, 1.0];
        assert!(matches!(
            coupling_direction(&x, &(x + vector![1e-16, 0.0]), &Matrix::identity()),
            Err(Error::DegenerateDirection)
        ));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(projection_matrix(&vector![1.0, 0.0]), matrix![1.0, 0.0; 0.0, 0.0]);
        let p = projection_matrix(&vector![0.6, 0.8]);
        assert_abs_diff_eq!(p, matrix![0.36, 0.48; 0.48, 0.64], epsilon = 1e-15);
        assert_abs_diff_eq!(p.trace(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn reflection_examples() {
        assert_eq!(reflection_matrix(&vector![1.0, 0.0]), matrix![-1.0, 0.0; 0.0, 1.0]);
        let u = vector![0.6, 0.8];
        let h = reflection_matrix(&u);
        assert_abs_diff_eq!(h * u, -u, epsilon = 1e-15);
        assert_abs_diff_eq!(h * h, Matrix::identity(), epsilon = 1e-15);
    }

    #[test]
    fn orthogonal_correction_examples() {
        let i = Matrix::<2>::identity();
        assert_abs_diff_eq!(orthogonal_correction(&i, &i).unwrap(), i, epsilon = 1e-14);
        let r = *Rotation2::new(0.7).matrix();
        assert_abs_diff_eq!(orthogonal_correction(&i, &r).unwrap(), r, epsilon = 1e-14);
        let d = matrix![2.0, 0.0; 0.0, 3.0];
        assert_abs_diff_eq!(orthogonal_correction(&i, &d).unwrap(), i, epsilon = 1e-14);
        let singular = matrix![1.0, 1.0; 1.0, 1.0];
        assert!(matches!(orthogonal_correction(&i, &singular), Err(Error::AmbiguousPolarFactor)));
    }

    #[test]
    fn gamma_range() {
        assert!(CouplingConfig::with_gamma(1.0).is_err());
        assert!(CouplingConfig::with_gamma(-1.0001).is_err());
        assert_eq!(CouplingConfig::reflection().noise_scale(), 0.0);
    }

    #[test]
    fn increment_examples() {
        let m = FnModel::<2>::brownian();
        let dw = vector![0.3, -0.7];
        let x = vector![1.0, 0.5];
        let xp = vector![-0.2, 0.1];
        let refl = coupled_increment(&dw, 0.9, &x, &xp, &m, &CouplingConfig::reflection()).unwrap();
        let u = coupling_direction(&x, &xp, &Matrix::identity()).unwrap();
        assert_eq!(refl, reflection_matrix(&u) * dw);

        let proj = coupled_increment(
            &vector![2.0, 5.0],
            -1.5,
            &vector![1.0, 0.0],
            &State::zeros(),
            &m,
            &CouplingConfig::projection(),
        )
        .unwrap();
        assert_abs_diff_eq!(proj, vector![-1.5, 5.0], epsilon = 1e-15);

        let m1 = FnModel::<1>::new(|x| -x, |_| Matrix::identity() * 0.7);
        let cfg = CouplingConfig::with_gamma(0.3).unwrap();
        let one_d = coupled_increment(&vector![0.4], 0.2, &vector![1.0], &vector![-1.0], &m1, &cfg).unwrap();
        let expected = 0.3 * 0.4 + (1.0f64 - 0.09).sqrt() * 0.2;
        assert_abs_diff_eq!(one_d[0], expected, epsilon = 1e-15);
    }

    #[test]
    fn coupled_increments_are_wiener() {
        let m = FnModel::<2>::new(|_| State::zeros(), |_| matrix![1.0, 0.3; 0.0, 0.8]);
        let x = vector![0.4, -1.0];
        let xp = vector![-0.5, 0.2];
        let delta: f64 = 0.02;
        let n = 100_000;
        for gamma in [-1.0, 0.0, 0.5, 0.9] {
            let cfg = CouplingConfig::with_gamma(gamma).unwrap();
            let mut rng = replicate_rng(17, 0);
            let mut mean = State::<2>::zeros();
            let mut second = Matrix::<2>::zeros();
            for _ in 0..n {
                let dw = State::<2>::from_fn(|_, _| delta.sqrt() * rng.sample::<f64, _>(StandardNormal));
                let db = delta.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let w = coupled_increment(&dw, db, &x, &xp, &m, &cfg).unwrap();
                mean += w;
                second += w * w.transpose();
            }
            mean /= n as f64;
            second /= n as f64;
            let se_mean = (delta / n as f64).sqrt();
            let se_var = delta * (2.0 / n as f64).sqrt();
            for k in 0..2 {
                assert!(mean[k].abs() < 3.0 * se_mean, "gamma {gamma}: mean {}", mean[k]);
            }
            assert!((second[(0, 0)] - delta).abs() < 3.0 * se_var);
            assert!((second[(1, 1)] - delta).abs() < 3.0 * se_var);
            assert!(second[(0, 1)].abs() < 3.0 * delta / (n as f64).sqrt());
        }
    }

    proptest! {
        #[test]
        fn projection_identities(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0) {
            let v = vector![a, b, c];
            prop_assume!(v.norm() > 1e-3);
            let u = v / v.norm();
            let p = projection_matrix(&u);
            prop_assert!((p * p - p).norm() < 1e-12);
            prop_assert!((p - p.transpose()).norm() < 1e-12);
            prop_assert!((p * u - u).norm() < 1e-12);
            let h = reflection_matrix(&u);
            prop_assert!((h * h.transpose() - Matrix::<3>::identity()).norm() < 1e-12);
            prop_assert!((h * u + u).norm() < 1e-12);
        }

        #[test]
        fn orthogonal_component_preserved(
            x in prop::array::uniform2(-3.0f64..3.0),
            xp in prop::array::uniform2(-3.0f64..3.0),
            dw in prop::array::uniform2(-1.0f64..1.0),
            db in -1.0f64..1.0,
            gamma in -1.0f64..0.99,
        ) {
            let (x, xp, dw) = (State::from(x), State::from(xp), State::from(dw));
            prop_assume!((x - xp).norm() > 1e-6);
            let m = FnModel::<2>::brownian();
            let cfg = CouplingConfig::with_gamma(gamma).unwrap();
            let w = coupled_increment(&dw, db, &x, &xp, &m, &cfg).unwrap();
            let u = (x - xp).normalize();
            let v = vector![-u[1], u[0]];
            prop_assert!((v.dot(&w) - v.dot(&dw)).abs() < 1e-12);
        }

        #[test]
        fn inverse_recovers_forward(
            x in prop::array::uniform3(-3.0f64..3.0),
            xp in prop::array::uniform3(-3.0f64..3.0),
            dw in prop::array::uniform3(-1.0f64..1.0),
            db in -1.0f64..1.0,
            gamma in -1.0f64..0.99,
            correct in any::<bool>(),
        ) {
            let (x, xp, dw) = (State::from(x), State::from(xp), State::from(dw));
            prop_assume!((x - xp).norm() > 1e-6);
            let m = FnModel::<3>::new(
                |_| State::zeros(),
                |x: &State<3>| matrix![1.0 + 0.1 * x[0].sin(), 0.2, 0.0; 0.0, 1.0, 0.1 * x[1]; 0.0, 0.0, 1.5],
            );
            let cfg = CouplingConfig::new(gamma, correct).unwrap();
            let frame = CouplingFrame::at(&m, &x, &xp, &cfg, 0).unwrap();
            let w = frame.forward(&cfg, &dw, db);
            let du = frame.complementary_noise(&cfg, &dw, db);
            prop_assert!((frame.inverse(&cfg, &w, du) - dw).norm() < 1e-12);
        }
    }
}
