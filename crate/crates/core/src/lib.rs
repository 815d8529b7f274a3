//! Convex-duality solvers for two-layer ReLU training: exact solvers for
//! orthogonal-separable data, an SDP and Goemans-Williamson pipeline for
//! negatively correlated data, geometric-ratio bounds for general data, and
//! brute-force oracles for small instances.

pub mod conic;
pub mod dataset;
pub mod dual;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod maxcut;
pub mod network;
pub mod oracle;
pub mod primal;

pub use error::{Error, Result};
