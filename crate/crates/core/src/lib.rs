//! World-line Monte Carlo for the Casimir interaction energy of a piston in
//! the neck of a flask, for a massless scalar field with Dirichlet walls.

pub mod bessel;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod interaction;
pub mod loops;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
