//! Numerical laboratory for one-cut log-gases: equilibrium measures,
//! varying-weight orthogonal polynomials, beta = 1 and beta = 2 kernels,
//! finite-n variance identities, Toeplitz limits and a Metropolis sampler
//! for the linear-statistics CLT.

pub mod asymptotics;
pub mod clt;
pub mod config;
pub mod dd;
pub mod equilibrium;
pub mod error;
pub mod kernels;
pub mod orthopoly;
pub mod persist;
pub mod poly;
pub mod potential;
pub mod quadrature;
pub mod sampler;
pub mod scalar;
pub mod skew;

pub use dd::DoubleDouble;
pub use error::{Error, Result};
pub use poly::Polynomial;
pub use potential::{check_growth, Potential, TestFunction};
pub use scalar::Real;

/// Double-double scalar (about 32 significant digits).
pub type Dd = DoubleDouble;
