//! Scenario runner and invariant suites behind the `quiver-wp` binary.

pub mod run;
pub mod suites;

use quiver_wp::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;

/// Tolerances applied by `run` and `check`.
pub mod tol {
    pub const HARMONIC: f64 = 1e-6;
    pub const DERIVATIVE: f64 = 1e-4;
    pub const NORMAL_CENTER: f64 = 1e-6;
    pub const NORMAL_HARMONIC: f64 = 1e-5;
    pub const CURVATURE: f64 = 1e-3;
    pub const KAHLER: f64 = 1e-4;
    pub const FIBER: f64 = 1e-4;
    pub const CHERN_CHARACTER: f64 = 1e-8;
    pub const POTENTIAL: f64 = 1e-6;
    pub const VIRTUAL_CH: f64 = 1e-10;
    pub const LEMMA_STENCIL: f64 = 1e-5;
    pub const EXACT: f64 = 1e-10;
    pub const ADJOINT: f64 = 1e-12;
    pub const HODGE: f64 = 1e-9;
}

/// Exit code for a library error: solver failures are 2, everything else is input.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Solver(_) => EXIT_SOLVER,
        _ => EXIT_INPUT,
    }
}
