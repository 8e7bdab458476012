//! Outer-iteration plumbing shared by all three solvers.
//!
//! Each solver advances one price round at a time through [`OuterSolver`],
//! so callers (tests, the experiment harness) can observe, time, and
//! annotate every round; the `solve_*` convenience functions drive the same
//! step method to convergence.

use alloc::vec::Vec;

use crate::error::SolveError;
use crate::fmath;
use crate::model::CompiledInstance;

/// Summary of one outer (price) iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterStep {
    /// 0-based outer iteration index.
    pub outer_iter: usize,
    /// `max_i |theta_new - theta_old|` over cells; the stopping quantity.
    pub max_price_delta: f64,
    /// Inner primal-dual iterations spent this round (0 for the basic form).
    pub inner_iters: usize,
    /// 2-norm of all coupling-constraint violations at the round's allocation.
    pub primal_residual: f64,
    /// Violation norm of controller-owned (demand-side) constraints.
    pub controller_residual: f64,
    /// Violation norm of agent-owned (capacity-side) constraints.
    pub agent_residual: f64,
    /// FNV-1a fingerprint of the allocation snapshot.
    pub allocation_hash: u64,
    /// FNV-1a fingerprint of the price snapshot.
    pub price_hash: u64,
}

/// A solver that advances one outer price round per call.
pub trait OuterSolver {
    fn compiled(&self) -> &CompiledInstance;

    /// Runs one round: agent responses (with the inner consensus loop where
    /// the form has one) followed by the marginal-cost price update.
    fn step(&mut self) -> Result<OuterStep, SolveError>;

    /// True once the last price update moved no price by more than the
    /// configured tolerance.
    fn converged(&self) -> bool;

    /// Outer rounds completed so far.
    fn rounds(&self) -> usize;

    /// Current allocation, dense in canonical cell order.
    fn allocation_dense(&self) -> &[f64];

    /// Current prices, dense in canonical cell order.
    fn prices_dense(&self) -> &[f64];

    /// Current multipliers, aligned with `compiled().constraints`
    /// (empty for the basic form).
    fn dual_values(&self) -> &[f64];
}

/// Drives a solver to convergence, collecting one row per outer iteration.
/// Exceeding `max_outer` yields [`SolveError::OuterNonConvergence`] carrying
/// the partial trace.
pub fn run_to_convergence<S: OuterSolver + ?Sized>(
    solver: &mut S,
    max_outer: usize,
) -> Result<Vec<OuterStep>, SolveError> {
    let mut rows = Vec::new();
    while !solver.converged() {
        if rows.len() >= max_outer {
            return Err(SolveError::OuterNonConvergence {
                iterations: rows.len(),
                trace: rows,
            });
        }
        rows.push(solver.step()?);
    }
    Ok(rows)
}

/// Fingerprint of a dense value vector, exposed for trace consumers.
pub fn snapshot_hash(values: &[f64]) -> u64 {
    fmath::hash_f64s(values)
}
