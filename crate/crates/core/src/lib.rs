//! Stationary random area-preserving twist maps on the strip `ℝ × [−1, 1]`.
//!
//! The crate builds monotone twists from seed functions, composes them,
//! locates fixed points through generating functions, estimates critical
//! point densities of stationary processes and factors Hamiltonian
//! isotopies into alternating monotone twists.

pub mod critical;
pub mod environment;
pub mod error;
pub mod genfun;
pub mod isotopy;
pub mod numerics;
pub mod rice;
pub mod seed;
pub mod twist;

pub use error::{Error, Result};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
