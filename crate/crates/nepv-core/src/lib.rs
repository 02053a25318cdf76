#![no_std]
//! Solver and local convergence analysis for eigenvector-dependent nonlinear
//! eigenvalue problems that lack unitary invariance.

extern crate alloc;

pub mod aligned;
pub mod alignment;
pub mod convergence;
pub mod error;
pub mod fdcheck;
pub mod linalg;
pub mod presets;
pub mod problem;
pub mod scf;
pub mod sweep;

pub use error::{NepvError, Result};
pub use linalg::Mat;
pub use problem::{NepvProblem, StiefelPoint};
