//! Diffusion models, uniform time grids and Euler simulation.
//!
//! A model is anything implementing [`Diffusion`]: the SDE
//!
//! ```text
//! dX_t = alpha(X_t) dt + sigma(X_t) dW_t
//! ```
//!
//! with a d x d diffusion matrix that is invertible wherever the simulator
//! visits. The state dimension is a const parameter so the hot loops work on
//! stack-allocated vectors.
//!
//! The usual regularity conditions (a unique strong solution that is a strong
//! Markov process, ergodicity with an invariant density) are obligations of
//! the model author; nothing here can verify them.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{SMatrix, SVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type State<const D: usize> = SVector<f64, D>;
pub type Matrix<const D: usize> = SMatrix<f64, D, D>;

/// A d-dimensional diffusion `dX = alpha(X) dt + sigma(X) dW`.
pub trait Diffusion<const D: usize>: Sync {
    /// Drift `alpha(x)` per unit time.
    fn drift(&self, x: &State<D>) -> State<D>;

    /// Diffusion matrix `sigma(x)`.
    fn diffusion(&self, x: &State<D>) -> Matrix<D>;

    /// `sigma(x)^-1`, or `None` where sigma is singular. Models with a
    /// constant diffusion matrix should override this with a cached inverse.
    fn diffusion_inverse(&self, x: &State<D>) -> Option<Matrix<D>> {
        self.diffusion(x).try_inverse()
    }

    /// `V(x) = sigma(x) sigma(x)^T`.
    fn covariance(&self, x: &State<D>) -> Matrix<D> {
        let s = self.diffusion(x);
        s * s.transpose()
    }

    /// `V(x)^-1`.
    fn covariance_inverse(&self, x: &State<D>) -> Option<Matrix<D>> {
        self.diffusion_inverse(x).map(|si| si.transpose() * si)
    }

    /// Log of the invariant density, up to an additive constant, if known.
    fn log_invariant_density(&self, _x: &State<D>) -> Option<f64> {
        None
    }

    /// Closed-form drift of the time-reversed stationary diffusion, if known.
    fn reversed_drift(&self, _x: &State<D>) -> Option<State<D>> {
        None
    }
}

impl<const D: usize, M: Diffusion<D> + ?Sized> Diffusion<D> for &M {
    fn drift(&self, x: &State<D>) -> State<D> {
        (**self).drift(x)
    }
    fn diffusion(&self, x: &State<D>) -> Matrix<D> {
        (**self).diffusion(x)
    }
    fn diffusion_inverse(&self, x: &State<D>) -> Option<Matrix<D>> {
        (**self).diffusion_inverse(x)
    }
    fn covariance(&self, x: &State<D>) -> Matrix<D> {
        (**self).covariance(x)
    }
    fn covariance_inverse(&self, x: &State<D>) -> Option<Matrix<D>> {
        (**self).covariance_inverse(x)
    }
    fn log_invariant_density(&self, x: &State<D>) -> Option<f64> {
        (**self).log_invariant_density(x)
    }
    fn reversed_drift(&self, x: &State<D>) -> Option<State<D>> {
        (**self).reversed_drift(x)
    }
}

type VectorField<const D: usize> = Box<dyn Fn(&State<D>) -> State<D> + Send + Sync>;
type MatrixField<const D: usize> = Box<dyn Fn(&State<D>) -> Matrix<D> + Send + Sync>;
type ScalarField<const D: usize> = Box<dyn Fn(&State<D>) -> f64 + Send + Sync>;

/// A model assembled from closures.
pub struct FnModel<const D: usize> {
    drift: VectorField<D>,
    diffusion: MatrixField<D>,
    log_density: Option<ScalarField<D>>,
    reversed_drift: Option<VectorField<D>>,
}

impl<const D: usize> FnModel<D> {
    pub fn new(
        drift: impl Fn(&State<D>) -> State<D> + Send + Sync + 'static,
        diffusion: impl Fn(&State<D>) -> Matrix<D> + Send + Sync + 'static,
    ) -> Self {
        Self {
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
            log_density: None,
            reversed_drift: None,
        }
    }

    /// Zero drift and identity diffusion: standard Brownian motion.
    pub fn brownian() -> Self {
        Self::new(|_| State::zeros(), |_| Matrix::identity())
    }

    pub fn with_log_density(mut self, f: impl Fn(&State<D>) -> f64 + Send + Sync + 'static) -> Self {
        self.log_density = Some(Box::new(f));
        self
    }

    pub fn with_reversed_drift(
        mut self,
        f: impl Fn(&State<D>) -> State<D> + Send + Sync + 'static,
    ) -> Self {
        self.reversed_drift = Some(Box::new(f));
        self
    }
}

impl<const D: usize> Diffusion<D> for FnModel<D> {
    fn drift(&self, x: &State<D>) -> State<D> {
        (self.drift)(x)
    }
    fn diffusion(&self, x: &State<D>) -> Matrix<D> {
        (self.diffusion)(x)
    }
    fn log_invariant_density(&self, x: &State<D>) -> Option<f64> {
        self.log_density.as_ref().map(|f| f(x))
    }
    fn reversed_drift(&self, x: &State<D>) -> Option<State<D>> {
        self.reversed_drift.as_ref().map(|f| f(x))
    }
}

/// Uniform grid on `[0, horizon]` with `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    step_size: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::invalid("grid needs at least one step"));
        }
        Ok(Self {
            horizon,
            steps,
            step_size: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    /// Time of grid point `i`; `time(steps)` is exactly the horizon.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.steps as f64
        }
    }

    /// Index of the grid point closest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.step_size).round().max(0.0) as usize).min(self.steps)
    }
}

/// States on a [`TimeGrid`], indexed `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath<const D: usize> {
    grid: TimeGrid,
    states: Vec<State<D>>,
}

impl<const D: usize> SamplePath<D> {
    pub fn new(grid: TimeGrid, states: Vec<State<D>>) -> Result<Self> {
        if states.len() != grid.steps() + 1 {
            return Err(Error::invalid(format!(
                "path needs {} states, got {}",
                grid.steps() + 1,
                states.len()
            )));
        }
        Ok(Self { grid, states })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &[State<D>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &State<D> {
        &self.states[i]
    }

    pub fn first(&self) -> &State<D> {
        &self.states[0]
    }

    pub fn last(&self) -> &State<D> {
        &self.states[self.states.len() - 1]
    }

    pub fn into_states(self) -> Vec<State<D>> {
        self.states
    }

    /// The path run backwards in time: state `i` of the result is state
    /// `N - i` of `self`.
    pub fn reversed(&self) -> Self {
        let mut states = self.states.clone();
        states.reverse();
        Self {
            grid: self.grid,
            states,
        }
    }

    /// Writes `t,x1,...,xd` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::from("t");
        for k in 1..=D {
            write!(line, ",x{k}").unwrap();
        }
        writeln!(out, "{line}")?;
        for (i, x) in self.states.iter().enumerate() {
            line.clear();
            write!(line, "{:.16e}", self.grid.time(i)).unwrap();
            for v in x.iter() {
                write!(line, ",{v:.16e}").unwrap();
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Reads `t,x1,...,xd` rows (header required). Returns times and states.
pub fn read_csv_states<const D: usize, R: BufRead>(input: R) -> Result<(Vec<f64>, Vec<State<D>>)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("empty csv"))??;
    let columns = header.split(',').count();
    if columns != D + 1 {
        return Err(Error::invalid(format!(
            "expected {} columns (t + {D} coordinates), header has {columns}",
            D + 1
        )));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("line {}: {e}", lineno + 2)))?;
        if values.len() != D + 1 {
            return Err(Error::invalid(format!(
                "line {}: expected {} values, got {}",
                lineno + 2,
                D + 1,
                values.len()
            )));
        }
        times.push(values[0]);
        states.push(State::from_iterator(values[1..].iter().copied()));
    }
    Ok((times, states))
}

/// Driving Wiener increments `dW_1, ..., dW_N` (each of variance `delta`).
#[derive(Debug, Clone, PartialEq)]
pub struct WienerIncrements<const D: usize> {
    increments: Vec<State<D>>,
}

impl<const D: usize> WienerIncrements<D> {
    pub fn new(increments: Vec<State<D>>) -> Self {
        Self { increments }
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// Increment `i` in `1..=N`, following the one-based convention of the
    /// Euler recursion (increment `i` moves state `i - 1` to state `i`).
    pub fn get(&self, i: usize) -> &State<D> {
        &self.increments[i - 1]
    }

    pub fn as_slice(&self) -> &[State<D>] {
        &self.increments
    }

    pub fn into_vec(self) -> Vec<State<D>> {
        self.increments
    }
}

/// Draws a `N(0, delta I)` vector.
pub fn wiener_increment<const D: usize, R: Rng + ?Sized>(rng: &mut R, sqrt_delta: f64) -> State<D> {
    State::from_fn(|_, _| sqrt_delta * rng.sample::<f64, _>(StandardNormal))
}

/// One Euler step `x + alpha(x) delta + sigma(x) dW`.
pub fn euler_step<const D: usize, M: Diffusion<D> + ?Sized>(
    model: &M,
    x: &State<D>,
    delta: f64,
    dw: &State<D>,
) -> State<D> {
    x + model.drift(x) * delta + model.diffusion(x) * dw
}

pub(crate) fn is_finite<const D: usize>(x: &State<D>) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Simulates the Euler scheme from `x0`, returning the path together with the
/// increments it consumed.
pub fn simulate_path<const D: usize, M: Diffusion<D> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: &State<D>,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<(SamplePath<D>, WienerIncrements<D>)> {
    let n = grid.steps();
    let delta = grid.step_size();
    let sqrt_delta = delta.sqrt();
    let mut states = Vec::with_capacity(n + 1);
    let mut increments = Vec::with_capacity(n);
    states.push(*x0);
    let mut x = *x0;
    for i in 1..=n {
        let dw = wiener_increment(rng, sqrt_delta);
        x = euler_step(model, &x, delta, &dw);
        if !is_finite(&x) {
            return Err(Error::NonFinite { step: i });
        }
        states.push(x);
        increments.push(dw);
    }
    Ok((
        SamplePath { grid: *grid, states },
        WienerIncrements::new(increments),
    ))
}

/// Simulates only the terminal state of an Euler path from `x0`.
pub fn simulate_endpoint<const D: usize, M: Diffusion<D> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: &State<D>,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<State<D>> {
    let delta = grid.step_size();
    let sqrt_delta = delta.sqrt();
    let mut x = *x0;
    for i in 1..=grid.steps() {
        let dw = wiener_increment(rng, sqrt_delta);
        x = euler_step(model, &x, delta, &dw);
        if !is_finite(&x) {
            return Err(Error::NonFinite { step: i });
        }
    }
    Ok(x)
}

/// Euler re-simulation from `x0` with the given increments.
pub fn replay<const D: usize, M: Diffusion<D> + ?Sized>(
    model: &M,
    x0: &State<D>,
    grid: &TimeGrid,
    increments: &[State<D>],
) -> Vec<State<D>> {
    let delta = grid.step_size();
    let mut states = Vec::with_capacity(increments.len() + 1);
    let mut x = *x0;
    states.push(x);
    for dw in increments {
        x = euler_step(model, &x, delta, dw);
        states.push(x);
    }
    states
}

/// `sigma(x)^-1 (y - x - alpha(x) delta)`: the increment that takes `x` to
/// `y` in one Euler step.
pub fn implied_increment<const D: usize, M: Diffusion<D> + ?Sized>(
    model: &M,
    x: &State<D>,
    y: &State<D>,
    delta: f64,
    index: usize,
) -> Result<State<D>> {
    let inv = model
        .diffusion_inverse(x)
        .ok_or(Error::SingularDiffusion { index })?;
    Ok(inv * (y - x - model.drift(x) * delta))
}

/// Inverts the Euler map along a path.
pub fn recover_increments<const D: usize, M: Diffusion<D> + ?Sized>(
    model: &M,
    path: &SamplePath<D>,
) -> Result<WienerIncrements<D>> {
    let delta = path.grid().step_size();
    let increments = path
        .states()
        .windows(2)
        .enumerate()
        .map(|(i, w)| implied_increment(model, &w[0], &w[1], delta, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(WienerIncrements::new(increments))
}
