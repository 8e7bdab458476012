//! Error types shared across the crate.

use alloc::string::String;
use alloc::vec::Vec;

use crate::admm::ResidualSample;
use crate::model::CellId;
use crate::step::OuterStep;

/// Errors from scalar function construction and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum FnError {
    /// Evaluation outside the family's admissible domain (x >= 0 where required).
    Domain { family: &'static str, x: f64 },
    /// Construction with parameters violating the family's constraints.
    InvalidParams { family: &'static str, message: String },
}

impl core::fmt::Display for FnError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FnError::Domain { family, x } => {
                write!(f, "{family}: x = {x} outside admissible domain")
            }
            FnError::InvalidParams { family, message } => {
                write!(f, "{family}: invalid parameters: {message}")
            }
        }
    }
}

impl core::error::Error for FnError {}

/// Errors from solvers, the oracle, and instance plumbing.
#[derive(Debug, Clone, PartialEq)]
pub enum SolveError {
    /// A scalar subproblem is not convex and no proximal weight rescues it.
    NonConvex { detail: String },
    /// The constraint system admits no feasible point inside the boxes.
    Infeasible { detail: String },
    /// Outer (price) loop exhausted its iteration budget; carries the trace.
    OuterNonConvergence { iterations: usize, trace: Vec<OuterStep> },
    /// Inner primal-dual loop exhausted its budget; carries residual history.
    InnerNonConvergence { iterations: usize, history: Vec<ResidualSample> },
    /// The oracle's first-order method did not reach the requested tolerance.
    OracleNonConvergence { iterations: usize, residual: f64 },
    /// The oracle result disagrees with its internal brute-force cross-check.
    OracleGridMismatch { detail: String },
    /// Instance failed validation; the messages name each violated invariant.
    InvalidInstance { violations: Vec<String> },
    /// An allocation or price profile is missing a cell the instance defines.
    IncompleteAllocation { cell: CellId },
    /// A reference result was computed for a different instance.
    InstanceMismatch,
    /// A scalar function error surfaced during a solve.
    Function(FnError),
    /// Bad caller-supplied parameter (sizes, tolerances, ranges).
    InvalidParameter { message: String },
}

impl core::fmt::Display for SolveError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SolveError::NonConvex { detail } => write!(f, "non-convex subproblem: {detail}"),
            SolveError::Infeasible { detail } => write!(f, "infeasible constraints: {detail}"),
            SolveError::OuterNonConvergence { iterations, .. } => {
                write!(f, "price loop did not converge within {iterations} outer iterations")
            }
            SolveError::InnerNonConvergence { iterations, .. } => {
                write!(f, "inner loop did not converge within {iterations} iterations")
            }
            SolveError::OracleNonConvergence { iterations, residual } => write!(
                f,
                "oracle did not reach tolerance in {iterations} steps (residual {residual:e})"
            ),
            SolveError::OracleGridMismatch { detail } => {
                write!(f, "oracle disagrees with grid cross-check: {detail}")
            }
            SolveError::InvalidInstance { violations } => {
                write!(f, "invalid instance ({} violations)", violations.len())?;
                for v in violations {
                    write!(f, "; {v}")?;
                }
                Ok(())
            }
            SolveError::IncompleteAllocation { cell } => {
                write!(f, "allocation missing cell {cell}")
            }
            SolveError::InstanceMismatch => {
                write!(f, "reference result belongs to a different instance")
            }
            SolveError::Function(e) => write!(f, "{e}"),
            SolveError::InvalidParameter { message } => write!(f, "invalid parameter: {message}"),
        }
    }
}

impl core::error::Error for SolveError {}

impl From<FnError> for SolveError {
    fn from(e: FnError) -> Self {
        SolveError::Function(e)
    }
}
