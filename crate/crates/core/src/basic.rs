//! Basic form: one controller, independent agents.
//!
//! Each round, every agent maximizes its incentive function
//! `Phi(theta, x) = -f(x) + theta*x - g(x)` at the current price (a Jacobi
//! sweep: all agents respond to the same price snapshot, so evaluation order
//! cannot matter), then the controller re-prices every agent at its marginal
//! cost `theta <- g'(x)`. The loop stops when no price moves by more than
//! `tol_price`. At the fixed point each interior `x_i` minimizes `f_i` alone:
//! substituting the price rule into the first-order condition of `Phi`
//! cancels the cost terms.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::SolveError;
use crate::model::{
    Allocation, CellId, CompiledInstance, GameForm, GameInstance, PriceProfile,
};
use crate::scalar::{argmin_shifted, Bounds, ScalarFn};
use crate::step::{run_to_convergence, snapshot_hash, OuterSolver, OuterStep};

/// Initial-price rule: marginal cost of the first unit, or explicit values.
#[derive(Debug, Clone, PartialEq)]
pub enum Theta0Rule {
    /// `theta_i = g_i'(0)`, scale-free and parameter-independent.
    MarginalCostAtZero,
    /// Caller-supplied starting prices per cell.
    Explicit(BTreeMap<CellId, f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicSolveOptions {
    pub theta0: Theta0Rule,
    /// Stop when no price moves by more than this between rounds.
    pub tol_price: f64,
    pub max_outer: usize,
}

impl Default for BasicSolveOptions {
    fn default() -> Self {
        BasicSolveOptions {
            theta0: Theta0Rule::MarginalCostAtZero,
            tol_price: 1e-8,
            max_outer: 10_000,
        }
    }
}

impl BasicSolveOptions {
    pub(crate) fn validate(&self) -> Result<(), SolveError> {
        if !self.tol_price.is_finite() || self.tol_price <= 0.0 {
            return Err(SolveError::InvalidParameter {
                message: "tol_price must be > 0".to_string(),
            });
        }
        if self.max_outer == 0 {
            return Err(SolveError::InvalidParameter {
                message: "max_outer must be >= 1".to_string(),
            });
        }
        Ok(())
    }
}

/// The agent's best response at price `theta`: the maximizer of the
/// incentive function over the box, computed as the minimizer of
/// `f(x) + g(x) - theta*x`.
pub fn agent_best_response(
    f: &ScalarFn,
    g: &ScalarFn,
    theta: f64,
    bounds: Bounds,
) -> Result<f64, SolveError> {
    let fg = ScalarFn::Sum(alloc::vec![f.clone(), g.clone()]);
    argmin_shifted(&fg, -theta, 0.0, 0.0, bounds)
}

/// Marginal-cost price update: the next price equals the agent's marginal
/// cost at the current resource level.
pub fn price_update(g: &ScalarFn, x: f64) -> Result<f64, SolveError> {
    Ok(g.grad(x)?)
}

pub struct BasicSolver {
    compiled: CompiledInstance,
    /// Precombined `f + g` per cell.
    fg: Vec<ScalarFn>,
    x: Vec<f64>,
    theta: Vec<f64>,
    tol_price: f64,
    rounds: usize,
    last_delta: f64,
}

impl BasicSolver {
    pub fn new(inst: &GameInstance, opts: &BasicSolveOptions) -> Result<Self, SolveError> {
        opts.validate()?;
        if inst.form != GameForm::Basic {
            return Err(SolveError::InvalidInstance {
                violations: alloc::vec![alloc::format!(
                    "basic solver requires form basic, instance has form {}",
                    inst.form.name()
                )],
            });
        }
        let compiled = inst.compile()?;
        Self::from_compiled(compiled, opts)
    }

    pub(crate) fn from_compiled(
        compiled: CompiledInstance,
        opts: &BasicSolveOptions,
    ) -> Result<Self, SolveError> {
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
        let theta = initial_prices(&compiled, &opts.theta0)?;
        let x = alloc::vec![0.0; compiled.cells.len()];
        Ok(BasicSolver {
            compiled,
            fg,
            x,
            theta,
            tol_price: opts.tol_price,
            rounds: 0,
            last_delta: f64::INFINITY,
        })
    }
}

pub(crate) fn initial_prices(
    compiled: &CompiledInstance,
    rule: &Theta0Rule,
) -> Result<Vec<f64>, SolveError> {
    match rule {
        Theta0Rule::MarginalCostAtZero => compiled
            .cells
            .iter()
            .map(|cell| Ok(cell.g.grad(0.0)?))
            .collect(),
        Theta0Rule::Explicit(map) => compiled
            .cells
            .iter()
            .map(|cell| {
                map.get(&cell.id)
                    .copied()
                    .ok_or_else(|| SolveError::IncompleteAllocation {
                        cell: cell.id.clone(),
                    })
            })
            .collect(),
    }
}

impl OuterSolver for BasicSolver {
    fn compiled(&self) -> &CompiledInstance {
        &self.compiled
    }

    fn step(&mut self) -> Result<OuterStep, SolveError> {
        // Jacobi sweep: every agent responds to the same price snapshot.
        for (c, cell) in self.compiled.cells.iter().enumerate() {
            self.x[c] = argmin_shifted(&self.fg[c], -self.theta[c], 0.0, 0.0, cell.bounds)?;
        }
        let mut delta: f64 = 0.0;
        for (c, cell) in self.compiled.cells.iter().enumerate() {
            let next = price_update(&cell.g, self.x[c])?;
            delta = delta.max((next - self.theta[c]).abs());
            self.theta[c] = next;
        }
        self.last_delta = delta;
        let row = OuterStep {
            outer_iter: self.rounds,
            max_price_delta: delta,
            inner_iters: 0,
            primal_residual: 0.0,
            controller_residual: 0.0,
            agent_residual: 0.0,
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
        &[]
    }
}

#[derive(Debug, Clone)]
pub struct BasicSolveResult {
    pub allocation: Allocation,
    pub prices: PriceProfile,
    pub steps: Vec<OuterStep>,
}

/// Runs the basic-form iteration to a Stackelberg equilibrium.
pub fn solve_basic(
    inst: &GameInstance,
    opts: &BasicSolveOptions,
) -> Result<BasicSolveResult, SolveError> {
    let mut solver = BasicSolver::new(inst, opts)?;
    let steps = run_to_convergence(&mut solver, opts.max_outer)?;
    Ok(BasicSolveResult {
        allocation: solver.compiled.allocation_from_dense(&solver.x),
        prices: solver.compiled.prices_from_dense(&solver.theta),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::fixture_basic;

    #[test]
    fn best_response_examples() {
        let f = ScalarFn::quadratic(1.0, 2.0, 0.0).unwrap();
        let g = ScalarFn::quadratic(0.5, 0.0, 0.0).unwrap();
        let b = Bounds::new(0.0, 10.0).unwrap();
        // Stationarity 3x = 4 + theta.
        let x = agent_best_response(&f, &g, 0.0, b).unwrap();
        assert!((x - 4.0 / 3.0).abs() <= 1e-9);
        let x = agent_best_response(&f, &g, 2.0, b).unwrap();
        assert!((x - 2.0).abs() <= 1e-9);

        let f = ScalarFn::quadratic(1.0, 0.0, 0.0).unwrap();
        let g = ScalarFn::linear(0.0, 0.0).unwrap();
        assert_eq!(agent_best_response(&f, &g, 0.0, b).unwrap(), 0.0);
    }

    #[test]
    fn price_update_examples() {
        let g = ScalarFn::quadratic(0.5, 0.0, 0.0).unwrap();
        assert!((price_update(&g, 4.0 / 3.0).unwrap() - 4.0 / 3.0).abs() < 1e-15);

        let g = ScalarFn::linear(3.0, 0.0).unwrap();
        assert_eq!(price_update(&g, 0.7).unwrap(), 3.0);

        let g = ScalarFn::inv_shannon(1.0, 1.0).unwrap();
        assert!((price_update(&g, 1.0).unwrap() - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn quadratic_fixture_converges_with_exact_ratio() {
        let inst = fixture_basic(1);
        let opts = BasicSolveOptions::default();
        let mut solver = BasicSolver::new(&inst, &opts).unwrap();

        // theta0 = g'(0) = 0.
        assert_eq!(solver.prices_dense(), &[0.0]);

        let mut x_errors = Vec::new();
        let mut first_crossing = None;
        while !solver.converged() {
            let row = solver.step().unwrap();
            let err = (solver.allocation_dense()[0] - 2.0).abs();
            if err <= 1e-3 && first_crossing.is_none() {
                first_crossing = Some(row.outer_iter);
            }
            x_errors.push(err);
            assert!(solver.rounds() < 200);
        }

        // x-error follows 2 * 3^-(p+1): ratio exactly 1/3 down to the
        // scalar-solve noise floor.
        let mut checked = 0;
        for pair in x_errors.windows(2) {
            if pair[0] > 1e-5 {
                assert!(
                    (pair[1] / pair[0] - 1.0 / 3.0).abs() <= 1e-9,
                    "ratio {} at error {}",
                    pair[1] / pair[0],
                    pair[0]
                );
                checked += 1;
            }
        }
        assert!(checked >= 10);
        // First |x - 2| <= 1e-3 at outer iteration 6.
        assert_eq!(first_crossing, Some(6));

        let x = solver.allocation_dense()[0];
        let theta = solver.prices_dense()[0];
        assert!((x - 2.0).abs() <= 1e-7);
        assert!((theta - 2.0).abs() <= 1e-7);
    }

    #[test]
    fn immediate_fixed_point_at_origin() {
        // f = x^2 minimized at the box edge 0; g = 0.5 x^2 prices from 0.
        let mut inst = fixture_basic(1);
        *inst.controllers[0]
            .task_terms
            .get_mut(&crate::model::AgentId::new("a0"))
            .unwrap() = ScalarFn::quadratic(1.0, 0.0, 0.0).unwrap();
        let result = solve_basic(&inst, &BasicSolveOptions::default()).unwrap();
        let cell = CellId::new("c0", "a0");
        assert_eq!(result.allocation.x[&cell], 0.0);
        assert_eq!(result.prices.theta[&cell], 0.0);
        // x0 = 0 -> theta1 = 0 -> delta 0: single round.
        assert_eq!(result.steps.len(), 1);
    }

    #[test]
    fn linear_cost_terminates_after_one_sweep() {
        let mut inst = fixture_basic(1);
        *inst.agents[0]
            .cost_terms
            .get_mut(&crate::model::ControllerId::new("c0"))
            .unwrap() = ScalarFn::linear(3.0, 0.0).unwrap();
        let result = solve_basic(&inst, &BasicSolveOptions::default()).unwrap();
        assert_eq!(result.steps.len(), 1);
        let cell = CellId::new("c0", "a0");
        assert_eq!(result.prices.theta[&cell], 3.0);
        // Best response: 2(x-2) + 3 - 3 = 0 -> x = 2.
        assert!((result.allocation.x[&cell] - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn max_outer_exceeded_carries_trace() {
        let inst = fixture_basic(1);
        let opts = BasicSolveOptions {
            max_outer: 3,
            ..Default::default()
        };
        match solve_basic(&inst, &opts) {
            Err(SolveError::OuterNonConvergence { iterations, trace }) => {
                assert_eq!(iterations, 3);
                assert_eq!(trace.len(), 3);
                assert!(trace[2].max_price_delta > opts.tol_price);
            }
            other => panic!("expected OuterNonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_form() {
        let mut inst = fixture_basic(1);
        inst.form = GameForm::Mlmf;
        match BasicSolver::new(&inst, &BasicSolveOptions::default()) {
            Err(SolveError::InvalidInstance { violations }) => {
                assert!(violations[0].contains("form basic"));
            }
            Ok(_) => panic!("expected InvalidInstance"),
            Err(other) => panic!("expected InvalidInstance, got {other:?}"),
        }
    }

    #[test]
    fn sweep_is_order_independent() {
        // Jacobi purity: recomputing each best response from the same price
        // snapshot in any order gives bitwise the same allocation.
        let inst = fixture_basic(7);
        let opts = BasicSolveOptions::default();
        let mut solver = BasicSolver::new(&inst, &opts).unwrap();
        let theta_before: Vec<f64> = solver.prices_dense().to_vec();
        solver.step().unwrap();
        let x_solver = solver.allocation_dense().to_vec();

        let compiled = inst.compile().unwrap();
        let mut order: Vec<usize> = (0..compiled.cells.len()).collect();
        order.reverse();
        let mut x_manual = alloc::vec![0.0; compiled.cells.len()];
        for &c in &order {
            let cell = &compiled.cells[c];
            x_manual[c] =
                agent_best_response(&cell.f, &cell.g, theta_before[c], cell.bounds).unwrap();
        }
        assert_eq!(x_solver, x_manual);
    }

    #[test]
    fn explicit_initial_prices_are_honored() {
        // Starting the fixture at the equilibrium price converges in one
        // round: the response to theta = 2 is x = 2 and the price update
        // reproduces theta = 2.
        let inst = fixture_basic(1);
        let mut theta0 = alloc::collections::BTreeMap::new();
        theta0.insert(CellId::new("c0", "a0"), 2.0);
        let opts = BasicSolveOptions {
            theta0: Theta0Rule::Explicit(theta0),
            ..Default::default()
        };
        let result = solve_basic(&inst, &opts).unwrap();
        assert_eq!(result.steps.len(), 1);
        let cell = CellId::new("c0", "a0");
        assert!((result.allocation.x[&cell] - 2.0).abs() <= 1e-9);

        // A missing cell in the explicit map is rejected.
        let opts = BasicSolveOptions {
            theta0: Theta0Rule::Explicit(Default::default()),
            ..Default::default()
        };
        assert!(matches!(
            solve_basic(&inst, &opts),
            Err(SolveError::IncompleteAllocation { .. })
        ));
    }

    #[test]
    fn fixed_point_satisfies_task_kkt() {
        // At termination each agent's level is a KKT point of min f over its
        // box: interior levels have |f'(x)| <= 10 * tol_price / m, edge
        // levels have the correct gradient sign.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let opts = BasicSolveOptions::default();
        for _ in 0..30 {
            let mut inst = fixture_basic(1);
            let a_f: f64 = rng.gen_range(0.3..3.0);
            let b_f: f64 = rng.gen_range(-1.0..4.0);
            let a_g: f64 = rng.gen_range(0.3..3.0);
            let hi: f64 = rng.gen_range(0.5..3.0);
            *inst.controllers[0]
                .task_terms
                .get_mut(&crate::model::AgentId::new("a0"))
                .unwrap() = ScalarFn::quadratic(a_f, b_f, 0.0).unwrap();
            *inst.agents[0]
                .cost_terms
                .get_mut(&crate::model::ControllerId::new("c0"))
                .unwrap() = ScalarFn::quadratic(a_g, 0.0, 0.0).unwrap();
            inst.agents[0]
                .boxes
                .insert(crate::model::ControllerId::new("c0"), Bounds::new(0.0, hi).unwrap());

            let result = solve_basic(&inst, &opts).unwrap();
            let cell = CellId::new("c0", "a0");
            let x = result.allocation.x[&cell];
            let f = &inst.controllers[0].task_terms[&crate::model::AgentId::new("a0")];
            let grad = f.grad(x).unwrap();
            let tol_kkt = 10.0 * opts.tol_price / (2.0 * a_f);
            if x <= 0.0 {
                assert!(grad >= -tol_kkt, "grad {grad} at lower edge");
            } else if x >= hi {
                assert!(grad <= tol_kkt, "grad {grad} at upper edge");
            } else {
                assert!(grad.abs() <= tol_kkt, "interior grad {grad}");
            }
        }
    }

    #[test]
    fn quadratic_price_error_contracts_at_exactly_l_over_m_plus_l() {
        // Interior iterates on quadratic f (curvature m) and g (curvature L)
        // contract the price error by L/(m+L) per round, to 1e-9.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let m: f64 = rng.gen_range(0.5..4.0);
            let l: f64 = rng.gen_range(0.5..4.0);
            let b: f64 = rng.gen_range(1.0..3.0);
            let mut inst = fixture_basic(1);
            *inst.controllers[0]
                .task_terms
                .get_mut(&crate::model::AgentId::new("a0"))
                .unwrap() = ScalarFn::quadratic(m / 2.0, b, 0.0).unwrap();
            *inst.agents[0]
                .cost_terms
                .get_mut(&crate::model::ControllerId::new("c0"))
                .unwrap() = ScalarFn::quadratic(l / 2.0, 0.0, 0.0).unwrap();
            inst.agents[0].boxes.insert(
                crate::model::ControllerId::new("c0"),
                Bounds::new(0.0, 100.0).unwrap(),
            );

            let theta_star = l * b;
            let expected = l / (m + l);
            let mut solver = BasicSolver::new(&inst, &BasicSolveOptions::default()).unwrap();
            let mut prev_err = (solver.prices_dense()[0] - theta_star).abs();
            while !solver.converged() {
                solver.step().unwrap();
                let err = (solver.prices_dense()[0] - theta_star).abs();
                if prev_err >= 1e-2 * (1.0 + theta_star) {
                    let ratio = err / prev_err;
                    assert!(
                        (ratio - expected).abs() <= 1e-9,
                        "ratio {ratio} vs {expected} (m={m}, L={l})"
                    );
                }
                prev_err = err;
                assert!(solver.rounds() < 500);
            }
        }
    }

    #[test]
    fn individual_rationality_on_random_quadratics() {
        // theta* x* - g(x*) >= 0 for convex g with g(0) = 0.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mut inst = fixture_basic(1);
            let a_f: f64 = rng.gen_range(0.3..3.0);
            let b_f: f64 = rng.gen_range(0.5..4.0);
            let a_g: f64 = rng.gen_range(0.3..3.0);
            *inst.controllers[0]
                .task_terms
                .get_mut(&crate::model::AgentId::new("a0"))
                .unwrap() = ScalarFn::quadratic(a_f, b_f, 0.0).unwrap();
            *inst.agents[0]
                .cost_terms
                .get_mut(&crate::model::ControllerId::new("c0"))
                .unwrap() = ScalarFn::quadratic(a_g, 0.0, 0.0).unwrap();
            let result = solve_basic(&inst, &BasicSolveOptions::default()).unwrap();
            let utility = crate::model::agent_utility(
                &inst,
                &result.allocation,
                &result.prices,
                &crate::model::AgentId::new("a0"),
            )
            .unwrap();
            assert!(utility >= -1e-9, "utility {utility} negative");
        }
    }
}
