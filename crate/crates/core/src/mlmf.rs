//! Extended form 2: the multi-leader multi-follower game. Multiple
//! controllers and agents, with coupling constraints owned by both sides:
//! each controller carries multipliers for its demand constraints (conflicts
//! among agents), each agent for its capacity constraints (conflicts among
//! controllers). Both multiplier families ascend every inner iteration; the
//! outer loop is the same marginal-cost price update as the other forms, and
//! the exit point is the hierarchical social optimum: the minimizer of the
//! summed controller objectives under both constraint families.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::coupled::{ExtendedSolveOptions, PricedAdmm};
use crate::error::SolveError;
use crate::model::{
    Allocation, CompiledInstance, ConstraintSide, GameForm, GameInstance, PriceProfile,
};
use crate::step::{run_to_convergence, OuterSolver, OuterStep};

/// Multipliers split by owning side, keyed by constraint index in the
/// compiled constraint order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TwoSidedDuals {
    pub controller_duals: BTreeMap<usize, f64>,
    pub agent_duals: BTreeMap<usize, f64>,
}

impl TwoSidedDuals {
    pub(crate) fn from_dense(compiled: &CompiledInstance, lambda: &[f64]) -> Self {
        let mut duals = TwoSidedDuals::default();
        for (k, con) in compiled.constraints.iter().enumerate() {
            match con.side {
                ConstraintSide::Controller => {
                    duals.controller_duals.insert(k, lambda[k]);
                }
                ConstraintSide::Agent => {
                    duals.agent_duals.insert(k, lambda[k]);
                }
            }
        }
        duals
    }
}

/// Solver handle for the multi-leader multi-follower form.
pub struct MlmfSolver(PricedAdmm);

impl MlmfSolver {
    pub fn new(inst: &GameInstance, opts: &ExtendedSolveOptions) -> Result<Self, SolveError> {
        Ok(MlmfSolver(PricedAdmm::new(
            inst,
            opts,
            GameForm::Mlmf,
            "mlmf solver",
        )?))
    }
}

impl OuterSolver for MlmfSolver {
    fn compiled(&self) -> &CompiledInstance {
        self.0.compiled()
    }
    fn step(&mut self) -> Result<OuterStep, SolveError> {
        self.0.step()
    }
    fn converged(&self) -> bool {
        self.0.converged()
    }
    fn rounds(&self) -> usize {
        self.0.rounds()
    }
    fn allocation_dense(&self) -> &[f64] {
        self.0.allocation_dense()
    }
    fn prices_dense(&self) -> &[f64] {
        self.0.prices_dense()
    }
    fn dual_values(&self) -> &[f64] {
        self.0.dual_values()
    }
}

#[derive(Debug, Clone)]
pub struct MlmfSolveResult {
    pub allocation: Allocation,
    pub prices: PriceProfile,
    pub duals: TwoSidedDuals,
    pub steps: Vec<OuterStep>,
}

/// Runs the MLMF-game iteration to the hierarchical social optimum.
pub fn solve_mlmf(
    inst: &GameInstance,
    opts: &ExtendedSolveOptions,
) -> Result<MlmfSolveResult, SolveError> {
    let mut solver = MlmfSolver::new(inst, opts)?;
    let steps = run_to_convergence(&mut solver, opts.outer.max_outer)?;
    let compiled = solver.compiled();
    let duals = TwoSidedDuals::from_dense(compiled, solver.dual_values());
    Ok(MlmfSolveResult {
        allocation: compiled.allocation_from_dense(solver.allocation_dense()),
        prices: compiled.prices_from_dense(solver.prices_dense()),
        duals,
        steps,
    })
}

/// Nash certificate for the agents' game at exit: the largest improvement
/// any single cell can gain from a unilateral in-box deviation of its payoff
/// `psi(x) = f(x) + g(x) - theta*x` plus the multiplier terms, probed on a
/// uniform grid of `grid_points` deviations per cell. At a Nash point this
/// is nonpositive up to solver tolerance.
pub fn nash_certificate(
    compiled: &CompiledInstance,
    x: &[f64],
    theta: &[f64],
    lambda: &[f64],
    grid_points: usize,
) -> Result<f64, SolveError> {
    let mut worst: f64 = 0.0;
    for (c, cell) in compiled.cells.iter().enumerate() {
        let dual_coef: f64 = compiled.cell_constraints[c]
            .iter()
            .map(|&(k, a)| lambda[k] * a)
            .sum();
        let payoff = |v: f64| -> Result<f64, SolveError> {
            Ok(cell.f.eval(v)? + cell.g.eval(v)? - theta[c] * v + dual_coef * v)
        };
        let current = payoff(x[c])?;
        let (lo, hi) = (cell.bounds.lo(), cell.bounds.hi());
        for i in 0..=grid_points {
            let v = lo + (hi - lo) * i as f64 / grid_points as f64;
            let candidate = payoff(v)?;
            worst = worst.max(current - candidate);
        }
    }
    Ok(worst)
}
