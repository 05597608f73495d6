//! Numerical solvers and verifiers for reflected backward stochastic PDEs.

pub mod error;
pub mod grid;
pub mod lattice;
pub mod par;
pub mod penalty;
pub mod bspde;
pub mod problem;
pub mod pathwise;
pub mod quasilinear;

pub use error::{Error, Result};
