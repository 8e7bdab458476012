//! Ground-truth constrained solver and KKT verifier.
//!
//! The oracle minimizes the summed controller objectives subject to all
//! coupling constraints and boxes with an augmented-Lagrangian outer loop
//! whose inner solve is projected gradient (diminishing-then-fixed step
//! `1/L_total`, run to a gradient-mapping tolerance). That is a deliberately
//! different algorithm from the game solvers (no prices, no per-cell
//! splitting), so agreement between the two is an honest cross-check rather
//! than the same code path twice. On tiny instances (at most 4 cells) the
//! result is additionally cross-checked against a dense feasible-grid
//! search before being returned.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::SolveError;
use crate::fmath;
use crate::model::{
    Allocation, CompiledConstraint, CompiledInstance, ConstraintKind, GameInstance,
};
use crate::scalar::{Bounds, ScalarFn};

/// Centralized constrained optimum: allocation, per-controller objective
/// values, and one multiplier per coupling constraint (compiled order).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub instance_fingerprint: u64,
    pub allocation: Allocation,
    pub controller_values: Vec<f64>,
    pub objective_total: f64,
    pub multipliers: Vec<f64>,
}

/// Residual norms of the KKT system at a candidate primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// 2-norm over cells of the box-projected Lagrangian gradient.
    pub stationarity: f64,
    /// 2-norm of constraint violations (boxes included).
    pub feasibility: f64,
    /// 2-norm of `lambda_k * residual_k` over less-equal constraints, plus
    /// any negative-multiplier mass.
    pub complementarity: f64,
}

impl KktReport {
    pub fn pass(&self, tol: f64) -> bool {
        self.stationarity <= tol && self.feasibility <= tol && self.complementarity <= tol
    }
}

const ORACLE_TOTAL_STEP_BUDGET: usize = 1_000_000;
const ORACLE_MAX_OUTER: usize = 200;

/// Computes the hierarchical social optimum for the instance: minimize the
/// sum of controller objectives subject to every coupling constraint and box.
pub fn centralized_optimum(inst: &GameInstance, tol: f64) -> Result<OracleResult, SolveError> {
    let compiled = inst.compile()?;
    let objectives: Vec<ScalarFn> = compiled.cells.iter().map(|c| c.f.clone()).collect();
    let bounds: Vec<Bounds> = compiled.cells.iter().map(|c| c.bounds).collect();
    let (x, lambda) = constrained_minimum(&objectives, &bounds, &compiled.constraints, tol)?;

    if compiled.cells.len() <= 4 {
        grid_cross_check(&objectives, &bounds, &compiled.constraints, &x, &lambda)?;
    }

    let controller_values = compiled.controller_values(&x)?;
    let objective_total = controller_values.iter().sum();
    Ok(OracleResult {
        instance_fingerprint: compiled.fingerprint,
        allocation: compiled.allocation_from_dense(&x),
        controller_values,
        objective_total,
        multipliers: lambda,
    })
}

/// Minimizes a separable convex objective over boxes and linear constraints;
/// the generic engine behind the oracle, also used for Euclidean projections
/// onto the feasible set. Returns the primal point and one multiplier per
/// constraint.
pub fn constrained_minimum(
    objectives: &[ScalarFn],
    bounds: &[Bounds],
    constraints: &[CompiledConstraint],
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>), SolveError> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(SolveError::InvalidParameter {
            message: "oracle tolerance must be > 0".to_string(),
        });
    }
    let n = objectives.len();
    if bounds.len() != n {
        return Err(SolveError::InvalidParameter {
            message: "objectives and bounds disagree in length".to_string(),
        });
    }

    let mut x = crate::admm::check_feasible(bounds, constraints)?;
    let mut lambda = alloc::vec![0.0_f64; constraints.len()];

    let mut membership: Vec<Vec<(usize, f64)>> = alloc::vec![Vec::new(); n];
    for (k, con) in constraints.iter().enumerate() {
        for &(c, a) in &con.terms {
            membership[c].push((k, a));
        }
    }

    // Curvature part of the objective's Lipschitz constant; the penalty part
    // is rescaled whenever mu changes. Unbounded per-cell curvature (power
    // laws near the origin) is capped: the step only needs an upper bound.
    let l_objective = objectives
        .iter()
        .zip(bounds)
        .map(|(f, b)| {
            let (_, l) = f.curvature_bounds(*b);
            if l.is_finite() {
                l
            } else {
                1e9
            }
        })
        .fold(0.0_f64, f64::max);
    let row_sums: Vec<f64> = constraints
        .iter()
        .map(|con| con.terms.iter().map(|&(_, a)| a.abs()).sum::<f64>())
        .collect();
    let mut penalty_gershgorin: f64 = 0.0;
    {
        let mut col = alloc::vec![0.0_f64; n];
        for (k, con) in constraints.iter().enumerate() {
            for &(c, a) in &con.terms {
                col[c] += a.abs() * row_sums[k];
            }
        }
        for v in &col {
            penalty_gershgorin = penalty_gershgorin.max(*v);
        }
    }

    let mut mu = 10.0_f64;
    let mut steps_used = 0usize;
    let mut prev_feasibility = f64::INFINITY;

    for _outer in 0..ORACLE_MAX_OUTER {
        let l_total = (l_objective + mu * penalty_gershgorin).max(1e-12);
        let base_step = 1.0 / l_total;

        // Inner solve of the augmented Lagrangian by projected gradient:
        // coarse while the multipliers are far off, tightening to the target
        // tolerance as feasibility converges.
        let inner_tol = (0.3 * tol).max((0.1 * prev_feasibility).min(1e-2));
        let mut grad = alloc::vec![0.0_f64; n];
        let mut resid = alloc::vec![0.0_f64; constraints.len()];
        let mut inner_iter = 0usize;
        loop {
            for (k, con) in constraints.iter().enumerate() {
                resid[k] = con.residual(&x);
            }
            for c in 0..n {
                let mut g = objectives[c].grad(x[c])?;
                for &(k, a) in &membership[c] {
                    let force = match constraints[k].kind {
                        ConstraintKind::Equality => lambda[k] + mu * resid[k],
                        ConstraintKind::LessEqual => (lambda[k] + mu * resid[k]).max(0.0),
                    };
                    g += a * force;
                }
                grad[c] = g;
            }
            // Gradient mapping at the fixed step; also the stopping measure.
            let mut mapping_sq = 0.0;
            for c in 0..n {
                let moved = bounds[c].clamp(x[c] - base_step * grad[c]);
                let d = (x[c] - moved) / base_step;
                mapping_sq += d * d;
            }
            if fmath::sqrt(mapping_sq) <= inner_tol {
                break;
            }

            // Diminishing-then-fixed step schedule.
            let step = base_step.max(1.8 / (l_total * fmath::sqrt(inner_iter as f64 + 1.0)));
            let step = step.min(1.8 / l_total);
            for c in 0..n {
                x[c] = bounds[c].clamp(x[c] - step * grad[c]);
            }

            inner_iter += 1;
            steps_used += 1;
            if steps_used >= ORACLE_TOTAL_STEP_BUDGET {
                let report = kkt_residuals(objectives, bounds, constraints, &x, &lambda)?;
                return Err(SolveError::OracleNonConvergence {
                    iterations: steps_used,
                    residual: report.stationarity.max(report.feasibility),
                });
            }
        }

        // Multiplier ascent.
        for (k, con) in constraints.iter().enumerate() {
            let r = con.residual(&x);
            lambda[k] = match con.kind {
                ConstraintKind::Equality => lambda[k] + mu * r,
                ConstraintKind::LessEqual => (lambda[k] + mu * r).max(0.0),
            };
        }

        let report = kkt_residuals(objectives, bounds, constraints, &x, &lambda)?;
        if report.pass(tol) {
            return Ok((x, lambda));
        }
        // Slow feasibility progress: tighten the penalty.
        if report.feasibility > 0.25 * prev_feasibility {
            mu = (mu * 5.0).min(1e8);
        }
        prev_feasibility = report.feasibility;
    }

    let report = kkt_residuals(objectives, bounds, constraints, &x, &lambda)?;
    Err(SolveError::OracleNonConvergence {
        iterations: steps_used,
        residual: report
            .stationarity
            .max(report.feasibility)
            .max(report.complementarity),
    })
}

fn kkt_residuals(
    objectives: &[ScalarFn],
    bounds: &[Bounds],
    constraints: &[CompiledConstraint],
    x: &[f64],
    lambda: &[f64],
) -> Result<KktReport, SolveError> {
    let mut lagrangian_grad: Vec<f64> = objectives
        .iter()
        .zip(x)
        .map(|(f, &v)| f.grad(v))
        .collect::<Result<_, _>>()?;
    for (k, con) in constraints.iter().enumerate() {
        for &(c, a) in &con.terms {
            lagrangian_grad[c] += lambda[k] * a;
        }
    }
    let mut stationarity_sq = 0.0;
    for (c, b) in bounds.iter().enumerate() {
        let moved = b.clamp(x[c] - lagrangian_grad[c]);
        let d = x[c] - moved;
        stationarity_sq += d * d;
    }

    let mut feasibility_sq = 0.0;
    for con in constraints {
        let v = con.violation(x);
        feasibility_sq += v * v;
    }
    for (c, b) in bounds.iter().enumerate() {
        let v = (b.lo() - x[c]).max(0.0) + (x[c] - b.hi()).max(0.0);
        feasibility_sq += v * v;
    }

    let mut complementarity_sq = 0.0;
    for (k, con) in constraints.iter().enumerate() {
        if con.kind == ConstraintKind::LessEqual {
            let r = con.residual(x);
            let slackness = lambda[k] * r;
            complementarity_sq += slackness * slackness;
            let negative = (-lambda[k]).max(0.0);
            complementarity_sq += negative * negative;
        }
    }

    Ok(KktReport {
        stationarity: fmath::sqrt(stationarity_sq),
        feasibility: fmath::sqrt(feasibility_sq),
        complementarity: fmath::sqrt(complementarity_sq),
    })
}

/// Verifies a candidate allocation/multiplier pair against the KKT system of
/// the centralized problem. Multipliers are aligned with the compiled
/// constraint order.
pub fn kkt_check(
    inst: &GameInstance,
    alloc: &Allocation,
    multipliers: &[f64],
    _tol: f64,
) -> Result<KktReport, SolveError> {
    let compiled = inst.compile()?;
    kkt_check_compiled(&compiled, alloc, multipliers)
}

/// [`kkt_check`] against an already-compiled instance.
pub fn kkt_check_compiled(
    compiled: &CompiledInstance,
    alloc: &Allocation,
    multipliers: &[f64],
) -> Result<KktReport, SolveError> {
    if multipliers.len() != compiled.constraints.len() {
        return Err(SolveError::InvalidParameter {
            message: alloc::format!(
                "{} multipliers for {} constraints",
                multipliers.len(),
                compiled.constraints.len()
            ),
        });
    }
    let x = compiled.dense_from_allocation(alloc)?;
    let objectives: Vec<ScalarFn> = compiled.cells.iter().map(|c| c.f.clone()).collect();
    let bounds: Vec<Bounds> = compiled.cells.iter().map(|c| c.bounds).collect();
    kkt_residuals(&objectives, &bounds, &compiled.constraints, &x, multipliers)
}

/// Dense grid search over the (slightly relaxed) feasible set, used to
/// cross-check oracle outputs on instances with at most 4 cells. Errors if
/// the oracle value and the best feasible grid value disagree beyond the
/// grid's Lipschitz resolution.
fn grid_cross_check(
    objectives: &[ScalarFn],
    bounds: &[Bounds],
    constraints: &[CompiledConstraint],
    x_oracle: &[f64],
    lambda: &[f64],
) -> Result<(), SolveError> {
    let n = objectives.len();
    let points_per_cell: usize = match n {
        0 => return Ok(()),
        1 => 100_000,
        2 => 1_000,
        3 => 100,
        _ => 31,
    };

    let spacings: Vec<f64> = bounds
        .iter()
        .map(|b| b.width() / points_per_cell as f64)
        .collect();
    let max_spacing = spacings.iter().fold(0.0_f64, |acc, s| acc.max(*s));
    let feas_slack: Vec<f64> = constraints
        .iter()
        .map(|con| {
            con.terms.iter().map(|&(_, a)| a.abs()).sum::<f64>() * max_spacing
        })
        .collect();

    let mut best = f64::INFINITY;
    let mut idx = alloc::vec![0usize; n];
    'outer: loop {
        let mut point = alloc::vec![0.0_f64; n];
        for c in 0..n {
            point[c] = bounds[c].lo() + spacings[c] * idx[c] as f64;
        }
        let feasible = constraints.iter().zip(&feas_slack).all(|(con, slack)| {
            let r = con.residual(&point);
            match con.kind {
                ConstraintKind::Equality => r.abs() <= *slack,
                ConstraintKind::LessEqual => r <= *slack,
            }
        });
        if feasible {
            let mut value = 0.0;
            for c in 0..n {
                value += objectives[c].eval(point[c])?;
            }
            best = best.min(value);
        }
        // Odometer increment.
        for digit in idx.iter_mut() {
            *digit += 1;
            if *digit <= points_per_cell {
                continue 'outer;
            }
            *digit = 0;
        }
        break;
    }

    if !best.is_finite() {
        return Err(SolveError::OracleGridMismatch {
            detail: "grid search found no feasible point".to_string(),
        });
    }

    let mut oracle_value = 0.0;
    let mut lipschitz = 0.0;
    for c in 0..n {
        oracle_value += objectives[c].eval(x_oracle[c])?;
        let lo_grad = objectives[c].grad(bounds[c].lo())?.abs();
        let hi_grad = objectives[c].grad(bounds[c].hi())?.abs();
        lipschitz += lo_grad.max(hi_grad);
    }
    let scale = 1.0 + oracle_value.abs();
    // The grid relaxes feasibility by `feas_slack`, so its best value may
    // undercut the true optimum by at most the multiplier-weighted slack.
    let undercut = lambda
        .iter()
        .zip(&feas_slack)
        .map(|(l, s)| l.abs() * s)
        .sum::<f64>()
        + 1e-6 * scale;
    if oracle_value > best + undercut + 1e-6 * scale {
        return Err(SolveError::OracleGridMismatch {
            detail: alloc::format!("oracle value {oracle_value} above grid best {best}"),
        });
    }
    let resolution = lipschitz * max_spacing + undercut;
    if best > oracle_value + resolution + 1e-6 * scale {
        return Err(SolveError::OracleGridMismatch {
            detail: alloc::format!(
                "grid best {best} above oracle value {oracle_value} beyond resolution {resolution}"
            ),
        });
    }
    Ok(())
}
