//! Extended form 1: one controller whose agents are coupled by linear
//! constraints. The basic form's price loop stays the outer loop; at each
//! round the agents cooperatively reach a feasible consensus through the
//! ADMM inner loop before prices move.
//!
//! Prices update once per outer round, never inside the inner loop, and the
//! marginal-cost update uses the inner-converged allocation. Substituting
//! `theta = g'(x)` into the inner stationarity cancels the cost terms, so
//! the exit point satisfies the KKT system of `min sum f_i` subject to the
//! coupling constraints and boxes, with the inner multipliers as the
//! constrained problem's multipliers.

use alloc::vec::Vec;

use crate::admm::{admm_solve_warm, check_feasible, AdmmOptions, DualState};
use crate::basic::{initial_prices, BasicSolveOptions};
use crate::error::SolveError;
use crate::model::{
    Allocation, CompiledInstance, ConstraintSide, GameForm, GameInstance, PriceProfile,
};
use crate::scalar::ScalarFn;
use crate::step::{run_to_convergence, snapshot_hash, OuterSolver, OuterStep};

/// Options for the extended forms: the outer price loop plus the inner
/// consensus loop.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExtendedSolveOptions {
    pub outer: BasicSolveOptions,
    pub admm: AdmmOptions,
}

/// Shared outer machine for both extended forms: a price loop whose agent
/// response is an ADMM consensus solve over all cells. Multipliers and the
/// allocation are warm-started across rounds.
pub(crate) struct PricedAdmm {
    compiled: CompiledInstance,
    fg: Vec<ScalarFn>,
    x: Vec<f64>,
    theta: Vec<f64>,
    duals: DualState,
    warm_allocation: Option<Vec<f64>>,
    admm_opts: AdmmOptions,
    tol_price: f64,
    rounds: usize,
    last_delta: f64,
}

impl PricedAdmm {
    pub(crate) fn new(
        inst: &GameInstance,
        opts: &ExtendedSolveOptions,
        expected_form: GameForm,
        solver_name: &str,
    ) -> Result<Self, SolveError> {
        opts.outer.validate()?;
        opts.admm.validate()?;
        if inst.form != expected_form {
            return Err(SolveError::InvalidInstance {
                violations: alloc::vec![alloc::format!(
                    "{solver_name} requires form {}, instance has form {}",
                    expected_form.name(),
                    inst.form.name()
                )],
            });
        }
        let compiled = inst.compile()?;

        let mut fg = Vec::with_capacity(compiled.cells.len());
        for cell in &compiled.cells {
            let combined = ScalarFn::Sum(alloc::vec![cell.f.clone(), cell.g.clone()]);
            let (m, _) = combined.curvature_bounds(cell.bounds);
            if m < 0.0 {
                return Err(SolveError::NonConvex {
                    detail: alloc::format!(
                        "f + g has curvature lower bound {m} on the box at cell {}",
                        cell.id
                    ),
                });
            }
            fg.push(combined);
        }

        // Feasibility is a property of the instance, so the Slater-type
        // pre-solve runs once here rather than every round.
        let bounds: Vec<_> = compiled.cells.iter().map(|c| c.bounds).collect();
        check_feasible(&bounds, &compiled.constraints)?;

        let theta = initial_prices(&compiled, &opts.outer.theta0)?;
        let n_constraints = compiled.constraints.len();
        let n_cells = compiled.cells.len();
        Ok(PricedAdmm {
            compiled,
            fg,
            x: alloc::vec![0.0; n_cells],
            theta,
            duals: DualState::zeros(n_constraints),
            warm_allocation: None,
            admm_opts: opts.admm.clone(),
            tol_price: opts.outer.tol_price,
            rounds: 0,
            last_delta: f64::INFINITY,
        })
    }

    fn family_residuals(&self) -> (f64, f64, f64) {
        let mut controller_sq = 0.0;
        let mut agent_sq = 0.0;
        for con in &self.compiled.constraints {
            let v = con.violation(&self.x);
            match con.side {
                ConstraintSide::Controller => controller_sq += v * v,
                ConstraintSide::Agent => agent_sq += v * v,
            }
        }
        let total = crate::fmath::sqrt(controller_sq + agent_sq);
        (
            total,
            crate::fmath::sqrt(controller_sq),
            crate::fmath::sqrt(agent_sq),
        )
    }
}

impl OuterSolver for PricedAdmm {
    fn compiled(&self) -> &CompiledInstance {
        &self.compiled
    }

    fn step(&mut self) -> Result<OuterStep, SolveError> {
        // Incentive objective at the current prices: psi = f + g - theta*x.
        let cells: Vec<(ScalarFn, crate::scalar::Bounds)> = self
            .compiled
            .cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let psi = ScalarFn::Sum(alloc::vec![
                    self.fg[c].clone(),
                    ScalarFn::Linear {
                        s: -self.theta[c],
                        c: 0.0,
                    },
                ]);
                (psi, cell.bounds)
            })
            .collect();

        let out = admm_solve_warm(
            &cells,
            &self.compiled.constraints,
            &self.duals,
            self.warm_allocation.as_deref(),
            &self.admm_opts,
        )?;
        self.x = out.allocation;
        self.duals = out.duals;
        self.warm_allocation = Some(self.x.clone());
        let inner_iters = out.history.len();

        let mut delta: f64 = 0.0;
        for (c, cell) in self.compiled.cells.iter().enumerate() {
            let next = cell.g.grad(self.x[c])?;
            delta = delta.max((next - self.theta[c]).abs());
            self.theta[c] = next;
        }
        self.last_delta = delta;

        let (primal, controller, agent) = self.family_residuals();
        let row = OuterStep {
            outer_iter: self.rounds,
            max_price_delta: delta,
            inner_iters,
            primal_residual: primal,
            controller_residual: controller,
            agent_residual: agent,
            allocation_hash: snapshot_hash(&self.x),
            price_hash: snapshot_hash(&self.theta),
        };
        self.rounds += 1;
        Ok(row)
    }

    fn converged(&self) -> bool {
        self.last_delta <= self.tol_price
    }

    fn rounds(&self) -> usize {
        self.rounds
    }

    fn allocation_dense(&self) -> &[f64] {
        &self.x
    }

    fn prices_dense(&self) -> &[f64] {
        &self.theta
    }

    fn dual_values(&self) -> &[f64] {
        &self.duals.lambda
    }
}

/// Solver handle for the single-controller coupled form.
pub struct CoupledSolver(pub(crate) PricedAdmm);

impl CoupledSolver {
    pub fn new(inst: &GameInstance, opts: &ExtendedSolveOptions) -> Result<Self, SolveError> {
        Ok(CoupledSolver(PricedAdmm::new(
            inst,
            opts,
            GameForm::SingleControllerCoupled,
            "coupled solver",
        )?))
    }
}

impl OuterSolver for CoupledSolver {
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
pub struct CoupledSolveResult {
    pub allocation: Allocation,
    pub prices: PriceProfile,
    pub duals: DualState,
    pub steps: Vec<OuterStep>,
}

/// Runs the Stackelberg-game-based inner/outer iteration for one controller
/// with conflicted agents.
pub fn solve_single_controller_coupled(
    inst: &GameInstance,
    opts: &ExtendedSolveOptions,
) -> Result<CoupledSolveResult, SolveError> {
    let mut solver = CoupledSolver::new(inst, opts)?;
    let steps = run_to_convergence(&mut solver, opts.outer.max_outer)?;
    let inner = solver.0;
    Ok(CoupledSolveResult {
        allocation: inner.compiled.allocation_from_dense(&inner.x),
        prices: inner.compiled.prices_from_dense(&inner.theta),
        duals: inner.duals,
        steps,
    })
}
