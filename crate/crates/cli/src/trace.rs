//! Per-outer-iteration solve traces and their CSV projection.
//!
//! Column contract:
//! `outer_iter,epsilon,max_price_delta,inner_iters,primal_residual,agent_residual,controller_residual,wall_ms`
//! where `epsilon` appears only when an oracle reference was supplied and
//! `wall_ms` only when timing capture was requested (wall times are the one
//! nondeterministic column, so traces stay byte-reproducible by default).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub outer_iter: usize,
    /// Objective distance to the oracle optimum at this round's allocation.
    pub epsilon: Option<f64>,
    pub max_price_delta: f64,
    pub inner_iters: usize,
    pub primal_residual: f64,
    pub agent_residual: f64,
    pub controller_residual: f64,
    pub wall_ms: Option<f64>,
    pub allocation_hash: u64,
    pub price_hash: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    pub rows: Vec<TraceRow>,
    pub with_epsilon: bool,
    pub with_wall: bool,
}

impl SolveTrace {
    pub fn new(with_epsilon: bool, with_wall: bool) -> Self {
        SolveTrace {
            rows: Vec::new(),
            with_epsilon,
            with_wall,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("outer_iter");
        if self.with_epsilon {
            out.push_str(",epsilon");
        }
        out.push_str(",max_price_delta,inner_iters,primal_residual,agent_residual,controller_residual");
        if self.with_wall {
            out.push_str(",wall_ms");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{}", row.outer_iter);
            if self.with_epsilon {
                let _ = write!(out, ",{}", row.epsilon.unwrap_or(f64::NAN));
            }
            let _ = write!(
                out,
                ",{},{},{},{},{}",
                row.max_price_delta,
                row.inner_iters,
                row.primal_residual,
                row.agent_residual,
                row.controller_residual
            );
            if self.with_wall {
                let _ = write!(out, ",{}", row.wall_ms.unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_csv())
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

/// CSV projection of an inner consensus loop's residual history, columns
/// `inner_iter,primal,dual`.
pub fn residual_history_csv(history: &[hiergame_core::admm::ResidualSample]) -> String {
    let mut out = String::from("inner_iter,primal,dual\n");
    for sample in history {
        let _ = writeln!(out, "{},{},{}", sample.inner_iter, sample.primal, sample.dual);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize) -> TraceRow {
        TraceRow {
            outer_iter: i,
            epsilon: Some(0.5),
            max_price_delta: 0.25,
            inner_iters: 3,
            primal_residual: 0.0,
            agent_residual: 0.0,
            controller_residual: 0.0,
            wall_ms: Some(1.5),
            allocation_hash: 1,
            price_hash: 2,
        }
    }

    #[test]
    fn header_matches_contract() {
        let mut trace = SolveTrace::new(true, true);
        trace.rows.push(row(0));
        let csv = trace.to_csv();
        assert!(csv.starts_with(
            "outer_iter,epsilon,max_price_delta,inner_iters,primal_residual,agent_residual,controller_residual,wall_ms\n"
        ));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn residual_history_csv_columns() {
        use hiergame_core::admm::{admm_solve, standalone_constraint, AdmmOptions, DualState};
        use hiergame_core::{Bounds, ConstraintKind, ScalarFn};
        let cells = vec![
            (ScalarFn::quadratic(1.0, 1.0, 0.0).unwrap(), Bounds::new(0.0, 10.0).unwrap()),
            (ScalarFn::quadratic(1.0, 1.0, 0.0).unwrap(), Bounds::new(0.0, 10.0).unwrap()),
        ];
        let con = standalone_constraint(vec![(0, 1.0), (1, 1.0)], 1.0, ConstraintKind::Equality);
        let out = admm_solve(&cells, &[con], &DualState::zeros(1), &AdmmOptions::default())
            .unwrap();
        let csv = residual_history_csv(&out.history);
        assert!(csv.starts_with("inner_iter,primal,dual\n"));
        assert_eq!(csv.lines().count(), out.history.len() + 1);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,"));
    }

    #[test]
    fn optional_columns_absent_when_disabled() {
        let mut trace = SolveTrace::new(false, false);
        trace.rows.push(row(0));
        let csv = trace.to_csv();
        assert!(csv.starts_with(
            "outer_iter,max_price_delta,inner_iters,primal_residual,agent_residual,controller_residual\n"
        ));
        assert!(!csv.contains("epsilon"));
        assert!(!csv.contains("wall_ms"));
    }
}
