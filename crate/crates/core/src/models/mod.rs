//! Reference models: the multivariate Ornstein-Uhlenbeck process with its
//! exact bridge, and the hyperbolic diffusion.

mod hyperbolic;
pub(crate) mod linalg;
mod ou;

pub use hyperbolic::{bessel_k, hyperbolic_drift, hyperbolic_log_density, HyperbolicModel};
pub use linalg::{expm, is_stable};
pub use ou::{
    ou_bridge_marginal, ou_exact_bridge_sample, ou_gamma_t, ou_is_reversible, ou_stationary_covariance,
    OrnsteinUhlenbeck, OuExactBridge,
};
