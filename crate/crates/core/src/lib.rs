//! Numerics for the reflected stochastic heat equation on the half-line.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli_io;
pub mod error;
pub mod exec;
pub mod grid;
pub mod heat_kernel;
pub mod ldp;
pub mod obstacle;
pub mod skeleton;
pub mod spde;

pub use error::{Error, Result};
pub use exec::Exec;
pub use grid::{Control, Field, Grid, WeightParams, Window};
