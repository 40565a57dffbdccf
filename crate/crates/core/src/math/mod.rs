//! Deterministic numerical substrate: grids, seeded random streams,
//! Cholesky factorisation and the scalar nonlinearities used by the models.

mod grid;
mod linalg;
mod rng;
mod special;

pub use grid::Grid;
pub use linalg::{
    cholesky, sample_mvn, solve_lower, solve_lower_transpose, CholeskyFactor, JITTER_LADDER,
};
pub use rng::{SeededRng, StreamCounter};
pub use special::{log_sigmoid, sigmoid, softplus, softplus_inv};
