//! Error type shared by all solver modules.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes of grid construction, evaluation, and the solvers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Structurally invalid input (bad sizes, non-positive extents, ...).
    InvalidInput(String),
    /// Evaluation outside a function's domain of definition.
    Domain {
        /// Offending argument value.
        value: f64,
        /// What was being evaluated.
        detail: String,
    },
    /// An exponential argument exceeded the overflow guard.
    RangeOverflow {
        /// The argument that would overflow.
        argument: f64,
    },
    /// A linear system was singular or a constraint block degenerate.
    Singular(String),
    /// An iterative solver exhausted its budget.
    NonConvergence {
        /// Which solver failed.
        solver: &'static str,
        /// Iterations performed.
        iterations: usize,
        /// Last residual norm.
        residual: f64,
    },
    /// A field value left the admissible domain during a solve.
    DomainExit {
        /// Flat node index of the first offending value.
        node: usize,
        /// The offending value.
        value: f64,
        /// What domain was violated.
        detail: String,
    },
    /// Initial data failed a compatibility check.
    Incompatible {
        /// Compatibility level that failed (0 or 1).
        level: u8,
        /// Worst boundary residual.
        residual: f64,
        /// Description of the failed condition.
        detail: String,
    },
    /// The outer fixed-point iteration failed to contract.
    PicardStalled {
        /// Outer iterations performed.
        iterations: usize,
        /// Update-norm ratios observed so far.
        ratios: Vec<f64>,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Domain { value, detail } => {
                write!(f, "domain error: {detail} (value {value})")
            }
            Error::RangeOverflow { argument } => {
                write!(f, "range error: exponential argument {argument} exceeds overflow guard")
            }
            Error::Singular(msg) => write!(f, "singular system: {msg}"),
            Error::NonConvergence { solver, iterations, residual } => write!(
                f,
                "solver {solver} did not converge after {iterations} iterations (residual {residual:e})"
            ),
            Error::DomainExit { node, value, detail } => {
                write!(f, "solution left admissible domain at node {node}: {detail} (value {value})")
            }
            Error::Incompatible { level, residual, detail } => write!(
                f,
                "compatibility check failed at level {level}: {detail} (residual {residual:e})"
            ),
            Error::PicardStalled { iterations, ratios } => {
                write!(f, "fixed-point iteration stalled after {iterations} sweeps; ratios ")?;
                let mut sep = "";
                for r in ratios {
                    write!(f, "{sep}{r:.3}")?;
                    sep = ", ";
                }
                Ok(())
            }
        }
    }
}

impl core::error::Error for Error {}
