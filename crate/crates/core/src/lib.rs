//! GNSS first-fix positioning with learned pseudo-range error estimation.
//!
//! The pipeline estimates per-measurement errors with a graph neural network
//! over the satellites of an epoch, optionally discards measurements with
//! large estimated errors, regulates the least-squares cost so that the true
//! position becomes a stationary point, and solves it with iterative weighted
//! least squares. A synthetic urban-canyon generator supplies labeled data.

pub mod error;
pub mod estimator;
pub mod eval;
pub mod geodesy;
pub mod regulator;
pub mod selector;
pub mod simulator;
pub mod solver;
pub mod types;

#[cfg(test)]
mod test_support;

pub use error::{Error, Result};
pub use types::{
    Band, Constellation, EcefPosition, Epoch, Method, Observation, SatelliteState, SolutionState,
};
