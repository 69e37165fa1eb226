//! Numerical laboratory for symmetric pure-jump Markov processes with
//! variable-order kernels: jump intensities with declared bound constants,
//! exit functionals, a lattice Markov-chain approximation of the Dirichlet
//! form, Monte Carlo path simulation (direct and small/large-jump
//! splicing), spectral heat kernels and resolvents, and convergence
//! experiments for kernel sequences.

pub mod chain;
pub mod convergence;
pub mod error;
pub mod exec;
pub mod functionals;
pub mod kernels;
pub mod operators;
pub mod pathsim;
pub mod point;
pub mod quad;
pub mod stats;

pub use error::{Error, Result};
pub use point::{BoxBounds, Point};
