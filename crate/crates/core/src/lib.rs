//! Diffusive limits of translation-invariant Lindblad dynamics on the
//! lattice `Z^d`, computed on the momentum torus.
//!
//! The crate is organised bottom-up: [`torus`] holds grids and grid
//! functions, [`model`] the dispersion / noise kernels, [`zero_fiber`] the
//! Markov generator on momenta, [`perturbation`] the drift and diffusion
//! matrix, [`fiber_dynamics`] the full fiber semigroups and
//! [`montecarlo`] stochastic estimators.

pub mod error;
pub mod fiber_dynamics;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod perturbation;
pub mod torus;
pub mod zero_fiber;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
