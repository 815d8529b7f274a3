//! Numerical kernels shared by the geometry, dual, primal and oracle modules.

mod boxls;
mod ellipsoid;
mod ldp;
mod msn;
mod socp;

pub use boxls::{box_constrained_least_squares, nnls, BoxLsSolution, BOXLS_TOL};
pub use ellipsoid::{ellipsoid_maximize, Cut, EllipsoidConfig, EllipsoidResult, OracleAnswer};
pub use ldp::{least_distance, strict_realization};
pub use socp::solve_cone_program;
pub use msn::{
    masked_phase1, solve_min_sum_norms, NormBlock, MinSumNormsProblem, MinSumNormsSolution, Mode,
};
