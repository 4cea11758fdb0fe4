//! Simulation of diffusion bridges by coupling a forward diffusion with its
//! time reversal, with exact Monte Carlo corrections and Bayesian inference
//! for discretely observed diffusions.

pub mod bridge;
pub mod coupling;
pub mod diagnostics;
pub mod error;
pub mod exact;
pub mod inference;
pub mod models;
pub mod reversal;
pub mod rng;
pub mod sde;

pub use error::{Error, Result};
pub use sde::{Diffusion, Matrix, SamplePath, State, TimeGrid};
