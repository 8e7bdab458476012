//! Error type with process exit-code mapping.

use hiergame_core::SolveError;

/// Exit codes: 0 success, 2 validation failure, 3 non-convergence,
/// 4 infeasibility, 64 usage error; 1 for everything else (I/O and such).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(Vec<String>),
    NonConvergence(String),
    Infeasible(String),
    Io(String),
    Solve(SolveError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Validation(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Io(_) => 1,
            CliError::Solve(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation(violations) => {
                writeln!(f, "instance validation failed:")?;
                for v in violations {
                    writeln!(f, "  - {v}")?;
                }
                Ok(())
            }
            CliError::NonConvergence(m) => write!(f, "non-convergence: {m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
            CliError::Solve(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::InvalidInstance { violations } => CliError::Validation(violations),
            SolveError::Infeasible { detail } => CliError::Infeasible(detail),
            SolveError::OuterNonConvergence { iterations, .. } => CliError::NonConvergence(
                format!("price loop exhausted {iterations} outer iterations"),
            ),
            SolveError::InnerNonConvergence { iterations, .. } => CliError::NonConvergence(
                format!("inner loop exhausted {iterations} iterations"),
            ),
            SolveError::OracleNonConvergence { iterations, residual } => {
                CliError::NonConvergence(format!(
                    "oracle stopped after {iterations} steps at residual {residual:e}"
                ))
            }
            other => CliError::Solve(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
