//! Tape-based reverse-mode automatic differentiation on `ndarray` values.
//!
//! Built for small CPU models: dense batched matmuls go through
//! `matrixmultiply`, everything else is plain row-major loops.

pub mod gradcheck;
mod ops;
pub mod optim;
pub mod params;
mod real;
mod tape;

pub use optim::Adam;
pub use params::{Param, ParamId, ParamStore};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};

pub use ndarray;
