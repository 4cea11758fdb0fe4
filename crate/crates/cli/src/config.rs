//! Experiment configuration read from JSON and merged with command-line flags.

use anyhow::{bail, ensure, Context, Result};
use diffbridge::bridge::CrossingCriterion;
use diffbridge::coupling::CouplingConfig;
use diffbridge::inference::ImputationMode;
use diffbridge::models::{HyperbolicModel, OrnsteinUhlenbeck};
use diffbridge::{Diffusion, Matrix, State};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Option<ModelSpec>,
    pub start: Option<Vec<f64>>,
    pub end: Option<Vec<f64>>,
    pub horizon: Option<f64>,
    pub steps: Option<usize>,
    pub coupling: Option<CouplingConfig>,
    pub criterion: Option<CrossingCriterion>,
    pub max_attempts: Option<usize>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub qq_points: Option<usize>,
    pub lattice: Option<usize>,
    pub chain: Option<ChainSpec>,
    pub batches: Option<Vec<usize>>,
    pub gibbs: Option<GibbsSpec>,
    pub simulation: Option<SimulationSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Ou {
        #[serde(default)]
        mean: Option<Vec<f64>>,
        drift: Vec<Vec<f64>>,
        #[serde(default)]
        sigma: Option<Vec<Vec<f64>>>,
    },
    Hyperbolic {
        alpha: f64,
        dim: usize,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub batch: Option<usize>,
    pub max_trials: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsSpec {
    pub prior_mean: Option<f64>,
    pub prior_variance: Option<f64>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub steps_per_unit: Option<usize>,
    pub retries: Option<usize>,
    pub imputation: Option<ImputationMode>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub observations: Option<usize>,
    pub spacing: Option<f64>,
    pub start: Option<Vec<f64>>,
    pub steps_per_unit: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path).with_context(|| format!("opening config {}", path.display()))?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn model(&self) -> ModelSpec {
        self.model.clone().unwrap_or_else(ModelSpec::reference_ou)
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or(50)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or(1.0)
    }

    pub fn coupling(&self) -> CouplingConfig {
        self.coupling.unwrap_or_else(|| CouplingConfig::with_gamma(0.5).expect("valid gamma"))
    }

    /// The configured criterion, else reflection for `gamma = -1` and the
    /// default general rule otherwise.
    pub fn criterion(&self) -> CrossingCriterion {
        self.criterion.unwrap_or_else(|| {
            if self.coupling().gamma() == -1.0 {
                CrossingCriterion::reflection()
            } else {
                CrossingCriterion::default_for_step(self.horizon() / self.steps() as f64)
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.replicates {
            ensure!(r >= 1, "replicates must be at least 1");
        }
        ensure!(self.steps() >= 2, "steps must be at least 2");
        ensure!(self.horizon() > 0.0 && self.horizon().is_finite(), "horizon must be positive");
        Ok(())
    }
}

impl ModelSpec {
    pub fn reference_ou() -> Self {
        ModelSpec::Ou { mean: None, drift: vec![vec![1.5, 1.0], vec![1.0, 1.5]], sigma: None }
    }

    pub fn dim(&self) -> Result<usize> {
        match self {
            ModelSpec::Ou { drift, .. } => {
                ensure!(!drift.is_empty(), "OU drift matrix is empty");
                Ok(drift.len())
            }
            ModelSpec::Hyperbolic { dim, .. } => Ok(*dim),
        }
    }

    pub fn build<const D: usize>(&self) -> Result<AnyModel<D>> {
        Ok(match self {
            ModelSpec::Ou { mean, drift, sigma } => {
                let mean = match mean {
                    Some(m) => to_state::<D>(m, "OU mean")?,
                    None => State::zeros(),
                };
                let sigma = match sigma {
                    Some(s) => to_matrix::<D>(s, "OU sigma")?,
                    None => Matrix::identity(),
                };
                AnyModel::Ou(OrnsteinUhlenbeck::new(mean, to_matrix::<D>(drift, "OU drift")?, sigma)?)
            }
            ModelSpec::Hyperbolic { alpha, .. } => AnyModel::Hyperbolic(HyperbolicModel::new(*alpha)?),
        })
    }
}

pub fn to_state<const D: usize>(v: &[f64], what: &str) -> Result<State<D>> {
    if v.len() != D {
        bail!("{what} has {} entries, expected {D}", v.len());
    }
    Ok(State::from_column_slice(v))
}

pub fn to_matrix<const D: usize>(rows: &[Vec<f64>], what: &str) -> Result<Matrix<D>> {
    if rows.len() != D || rows.iter().any(|r| r.len() != D) {
        bail!("{what} must be {D}x{D}");
    }
    Ok(Matrix::from_fn(|i, j| rows[i][j]))
}

/// The models the command line can build.
#[derive(Debug, Clone)]
pub enum AnyModel<const D: usize> {
    Ou(OrnsteinUhlenbeck<D>),
    Hyperbolic(HyperbolicModel<D>),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Ou($m) => $e,
            AnyModel::Hyperbolic($m) => $e,
        }
    };
}

impl<const D: usize> Diffusion<D> for AnyModel<D> {
    fn drift(&self, x: &State<D>) -> State<D> {
        delegate!(self, m => m.drift(x))
    }
    fn diffusion(&self, x: &State<D>) -> Matrix<D> {
        delegate!(self, m => m.diffusion(x))
    }
    fn diffusion_inverse(&self, x: &State<D>) -> Option<Matrix<D>> {
        delegate!(self, m => m.diffusion_inverse(x))
    }
    fn covariance(&self, x: &State<D>) -> Matrix<D> {
        delegate!(self, m => m.covariance(x))
    }
    fn covariance_inverse(&self, x: &State<D>) -> Option<Matrix<D>> {
        delegate!(self, m => m.covariance_inverse(x))
    }
    fn log_invariant_density(&self, x: &State<D>) -> Option<f64> {
        delegate!(self, m => m.log_invariant_density(x))
    }
    fn reversed_drift(&self, x: &State<D>) -> Option<State<D>> {
        delegate!(self, m => m.reversed_drift(x))
    }
}
