//! Fidelity of Pauli-twirled Clifford circuits under correlated Gaussian
//! dephasing: analytic determinant formulas, extremal bounds, and
//! statevector Monte-Carlo cross-checks.

// `!(x > 0.0)` is how parameter checks reject NaN along with bad values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod circuit;
pub mod ensemble;
pub mod error;
pub mod finite_time;
pub mod montecarlo;
pub mod noise;
pub mod pauli;
pub mod qasm;
pub mod qkernel;
pub mod repcode;
pub mod rng;
pub mod stabilizer;
pub mod statevec;

pub use error::{Error, Result};

/// Library version recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
