//! Experiment driver: solves, parameter sweeps, level-shift studies,
//! validation runs and reproduction of the worked examples.

pub mod check;
pub mod cli;
pub mod commands;
pub mod config;
pub mod mmio;
pub mod output;
pub mod reproduce;
pub mod setup;

pub use cli::run;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// A check or reproduction target failed.
    pub const VALIDATION: i32 = 1;
    /// Bad configuration, unreadable input or unwritable output.
    pub const CONFIG: i32 = 2;
}
