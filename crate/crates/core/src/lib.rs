//! Optimal transport with relaxed terminal constraints: grid solver,
//! neural flow solver, exact transport oracles and reproducible studies.

pub mod error;
pub mod functionals;
pub mod measures;
pub mod transport_oracles;

pub use error::{Error, Result};
pub mod grid_solver;
pub mod neural_flow;
pub mod experiments;
pub mod field_io;
pub mod cli;
