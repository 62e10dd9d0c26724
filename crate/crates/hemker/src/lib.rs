//! Multi-stage Shishkin-mesh finite-difference solver for the Hemker
//! convection-diffusion benchmark on a bounded domain, together with the
//! double-mesh convergence harness used to measure it.

pub mod cli;
pub mod discretization;
pub mod error;
pub mod fields;
pub mod mesh;
pub mod params;
pub mod pipeline;
pub mod solver;
pub mod verification;

pub use error::{HemkerError, Result};
pub use params::ProblemParams;

/// CLI entry point; returns the process exit code.
pub fn run_cli() -> i32 {
    cli::main_from_args(std::env::args_os())
}
