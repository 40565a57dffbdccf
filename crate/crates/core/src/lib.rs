//! Spatial Bayesian neural networks.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`, which is what the pipeline,
//! the file formats and the command line use.

pub mod autodiff;
pub mod calibration;
pub mod diagnostics;
mod error;
pub mod inference;
pub mod io;
pub mod math;
pub mod model;
pub mod target;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Grid = math::Grid<f64>;
pub type Tape = autodiff::Tape<f64>;
