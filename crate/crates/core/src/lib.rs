//! Heterogeneous gases of positive charges with singular pair repulsion:
//! energies, annealed minimization, mean-field equilibrium predictions,
//! inverse design of charge laws, and finite-sample statistics.

pub mod energy;
pub mod equilibrium;
pub mod error;
pub mod gasmodel;
pub mod inverse;
pub mod io;
pub mod minimizer;
pub mod quadrature;
pub mod stats;

pub use error::{GasError, Result};
