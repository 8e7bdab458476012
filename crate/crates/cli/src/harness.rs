//! Experiment harness: drives solvers round by round, annotates each round
//! with wall time and the objective distance to the oracle optimum, sweeps
//! iteration counts against accuracy targets, and fits the iterations versus
//! `log10(1/epsilon)` relation.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use hiergame_core::basic::BasicSolver;
use hiergame_core::coupled::{CoupledSolver, ExtendedSolveOptions};
use hiergame_core::mlmf::MlmfSolver;
use hiergame_core::oracle::{centralized_optimum, constrained_minimum, OracleResult};
use hiergame_core::scenario::{gen_scenario, GenParams, ScenarioKind};
use hiergame_core::step::snapshot_hash;
use hiergame_core::{
    Bounds, CompiledInstance, GameForm, GameInstance, OuterSolver, ScalarFn, SolveError,
};

use crate::error::CliError;
use crate::trace::{SolveTrace, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Basic,
    Coupled,
    Mlmf,
    /// Comparison baseline: per-cell best responses that ignore the coupling
    /// constraints, followed by one Euclidean projection onto the feasible
    /// set. Not a mechanism from the game family; kept for the "without
    /// coordination" curve.
    Baseline,
}

impl SolverChoice {
    pub fn name(&self) -> &'static str {
        match self {
            SolverChoice::Basic => "basic",
            SolverChoice::Coupled => "coupled",
            SolverChoice::Mlmf => "mlmf",
            SolverChoice::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "basic" => Ok(SolverChoice::Basic),
            "coupled" => Ok(SolverChoice::Coupled),
            "mlmf" => Ok(SolverChoice::Mlmf),
            "baseline" => Ok(SolverChoice::Baseline),
            other => Err(CliError::Usage(format!(
                "unknown solver '{other}' (expected basic, coupled, mlmf, or baseline)"
            ))),
        }
    }

    /// The solver matching an instance's declared form.
    pub fn for_form(form: GameForm) -> Self {
        match form {
            GameForm::Basic => SolverChoice::Basic,
            GameForm::SingleControllerCoupled => SolverChoice::Coupled,
            GameForm::Mlmf => SolverChoice::Mlmf,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub solver: SolverChoice,
    pub opts: ExtendedSolveOptions,
    pub with_oracle: bool,
    pub oracle_tol: f64,
    /// Capture per-round wall times into the trace (nondeterministic bytes).
    pub timings: bool,
}

impl RunOptions {
    pub fn new(solver: SolverChoice) -> Self {
        RunOptions {
            solver,
            opts: ExtendedSolveOptions::default(),
            with_oracle: false,
            oracle_tol: 1e-9,
            timings: false,
        }
    }
}

/// Everything a solve run produced: dense solution state, the annotated
/// trace, and the oracle context when requested.
pub struct RunBundle {
    pub solver: SolverChoice,
    pub form: GameForm,
    pub compiled: CompiledInstance,
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub duals: Vec<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    pub final_max_price_delta: f64,
    pub objective_values: Vec<f64>,
    pub trace: SolveTrace,
    pub oracle: Option<OracleResult>,
    pub final_epsilon: Option<f64>,
    pub wall_ms_total: f64,
}

impl RunBundle {
    /// `||F*||_2`, the normalization used for relative accuracy readings.
    pub fn f_star_norm(&self) -> Option<f64> {
        self.oracle
            .as_ref()
            .map(|o| norm2(&o.controller_values))
    }

    pub fn final_epsilon_relative(&self) -> Option<f64> {
        match (self.final_epsilon, self.f_star_norm()) {
            (Some(eps), Some(norm)) => Some(eps / (1.0 + norm)),
            _ => None,
        }
    }
}

/// A failed run still carries whatever trace rows were produced, so callers
/// can always write the partial trace.
pub struct RunFailure {
    pub error: CliError,
    pub partial_trace: SolveTrace,
}

impl From<CliError> for RunFailure {
    fn from(error: CliError) -> Self {
        RunFailure {
            error,
            partial_trace: SolveTrace::default(),
        }
    }
}

fn norm2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Runs the selected solver on the instance, producing a trace with one row
/// per outer iteration (annotated with epsilon when the oracle is supplied).
pub fn run_experiment(inst: &GameInstance, ropts: &RunOptions) -> Result<RunBundle, RunFailure> {
    let oracle = if ropts.with_oracle {
        Some(centralized_optimum(inst, ropts.oracle_tol).map_err(CliError::from)?)
    } else {
        None
    };
    run_experiment_against(inst, ropts, oracle)
}

/// [`run_experiment`] with a caller-supplied oracle result (reused across
/// runs of the same instance).
pub fn run_experiment_against(
    inst: &GameInstance,
    ropts: &RunOptions,
    oracle: Option<OracleResult>,
) -> Result<RunBundle, RunFailure> {
    if let Some(reference) = &oracle {
        if reference.instance_fingerprint != inst.fingerprint() {
            return Err(CliError::from(SolveError::InstanceMismatch).into());
        }
    }
    if ropts.solver == SolverChoice::Baseline {
        return baseline_uncoordinated(inst, ropts, oracle);
    }

    let mut solver: Box<dyn OuterSolver> = match ropts.solver {
        SolverChoice::Basic => Box::new(
            BasicSolver::new(inst, &ropts.opts.outer).map_err(CliError::from)?,
        ),
        SolverChoice::Coupled => {
            Box::new(CoupledSolver::new(inst, &ropts.opts).map_err(CliError::from)?)
        }
        SolverChoice::Mlmf => Box::new(MlmfSolver::new(inst, &ropts.opts).map_err(CliError::from)?),
        SolverChoice::Baseline => unreachable!(),
    };

    let mut trace = SolveTrace::new(oracle.is_some(), ropts.timings);
    let started = Instant::now();
    while !solver.converged() {
        if trace.rows.len() >= ropts.opts.outer.max_outer {
            return Err(RunFailure {
                error: CliError::NonConvergence(format!(
                    "price loop exhausted {} outer iterations",
                    trace.rows.len()
                )),
                partial_trace: trace,
            });
        }
        let round_started = Instant::now();
        let step = match solver.step() {
            Ok(step) => step,
            Err(e) => {
                return Err(RunFailure {
                    error: e.into(),
                    partial_trace: trace,
                })
            }
        };
        let wall_ms = round_started.elapsed().as_secs_f64() * 1e3;
        let epsilon = match &oracle {
            Some(reference) => Some(
                epsilon_dense(solver.compiled(), solver.allocation_dense(), reference)
                    .map_err(|e| RunFailure {
                        error: e.into(),
                        partial_trace: SolveTrace::default(),
                    })?,
            ),
            None => None,
        };
        trace.rows.push(TraceRow {
            outer_iter: step.outer_iter,
            epsilon,
            max_price_delta: step.max_price_delta,
            inner_iters: step.inner_iters,
            primal_residual: step.primal_residual,
            agent_residual: step.agent_residual,
            controller_residual: step.controller_residual,
            wall_ms: ropts.timings.then_some(wall_ms),
            allocation_hash: step.allocation_hash,
            price_hash: step.price_hash,
        });
    }
    let wall_ms_total = started.elapsed().as_secs_f64() * 1e3;

    let compiled = solver.compiled().clone();
    let x = solver.allocation_dense().to_vec();
    let theta = solver.prices_dense().to_vec();
    let duals = solver.dual_values().to_vec();
    let objective_values = compiled
        .controller_values(&x)
        .map_err(|e| RunFailure::from(CliError::from(e)))?;
    let final_epsilon = trace.rows.last().and_then(|r| r.epsilon);
    Ok(RunBundle {
        solver: ropts.solver,
        form: inst.form,
        compiled,
        x,
        theta,
        duals,
        converged: true,
        outer_iterations: trace.rows.len(),
        final_max_price_delta: trace.rows.last().map(|r| r.max_price_delta).unwrap_or(0.0),
        objective_values,
        trace,
        oracle,
        final_epsilon,
        wall_ms_total,
    })
}

fn epsilon_dense(
    compiled: &CompiledInstance,
    x: &[f64],
    reference: &OracleResult,
) -> Result<f64, SolveError> {
    let achieved = compiled.controller_values(x)?;
    let diff_sq: f64 = achieved
        .iter()
        .zip(&reference.controller_values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(diff_sq.sqrt())
}

/// Uncoordinated comparison baseline: every cell runs the basic-form price
/// iteration in isolation (coupling constraints ignored), then the resulting
/// allocation is projected once onto the feasible set. The trace records the
/// raw per-sweep allocations; the appended final row is the projection.
pub fn baseline_uncoordinated(
    inst: &GameInstance,
    ropts: &RunOptions,
    oracle: Option<OracleResult>,
) -> Result<RunBundle, RunFailure> {
    let compiled = inst.compile().map_err(CliError::from)?;
    let started = Instant::now();

    let fg: Vec<ScalarFn> = compiled
        .cells
        .iter()
        .map(|cell| ScalarFn::Sum(vec![cell.f.clone(), cell.g.clone()]))
        .collect();
    for (cell, combined) in compiled.cells.iter().zip(&fg) {
        let (m, _) = combined.curvature_bounds(cell.bounds);
        if m < 0.0 {
            return Err(CliError::from(SolveError::NonConvex {
                detail: format!("f + g not convex at cell {}", cell.id),
            })
            .into());
        }
    }

    let mut theta: Vec<f64> = compiled
        .cells
        .iter()
        .map(|cell| cell.g.grad(0.0))
        .collect::<Result<_, _>>()
        .map_err(|e| RunFailure::from(CliError::from(SolveError::from(e))))?;
    let mut x = vec![0.0; compiled.cells.len()];

    let mut trace = SolveTrace::new(oracle.is_some(), ropts.timings);
    let tol = ropts.opts.outer.tol_price;
    let mut delta = f64::INFINITY;
    while delta > tol {
        if trace.rows.len() >= ropts.opts.outer.max_outer {
            return Err(RunFailure {
                error: CliError::NonConvergence(format!(
                    "baseline sweeps exhausted {} iterations",
                    trace.rows.len()
                )),
                partial_trace: trace,
            });
        }
        let round_started = Instant::now();
        for (c, cell) in compiled.cells.iter().enumerate() {
            x[c] = hiergame_core::argmin_shifted(&fg[c], -theta[c], 0.0, 0.0, cell.bounds)
                .map_err(|e| RunFailure::from(CliError::from(e)))?;
        }
        delta = 0.0;
        for (c, cell) in compiled.cells.iter().enumerate() {
            let next = cell
                .g
                .grad(x[c])
                .map_err(|e| RunFailure::from(CliError::from(SolveError::from(e))))?;
            delta = delta.max((next - theta[c]).abs());
            theta[c] = next;
        }
        push_baseline_row(&mut trace, &compiled, &x, &theta, delta, round_started, ropts, &oracle)
            .map_err(RunFailure::from)?;
    }

    // One Euclidean projection onto the feasible set: the constrained
    // minimum of the squared distance to the uncoordinated point.
    let round_started = Instant::now();
    let distance_objectives: Vec<ScalarFn> = x
        .iter()
        .map(|&center| ScalarFn::Quadratic {
            a: 0.5,
            b: center,
            c: 0.0,
        })
        .collect();
    let bounds: Vec<Bounds> = compiled.cells.iter().map(|c| c.bounds).collect();
    let (projected, _) =
        constrained_minimum(&distance_objectives, &bounds, &compiled.constraints, 1e-10)
            .map_err(|e| RunFailure {
                error: CliError::from(e),
                partial_trace: trace.clone(),
            })?;
    x = projected;
    push_baseline_row(&mut trace, &compiled, &x, &theta, 0.0, round_started, ropts, &oracle)
        .map_err(RunFailure::from)?;

    let wall_ms_total = started.elapsed().as_secs_f64() * 1e3;
    let objective_values = compiled
        .controller_values(&x)
        .map_err(|e| RunFailure::from(CliError::from(e)))?;
    let final_epsilon = trace.rows.last().and_then(|r| r.epsilon);
    let n_constraints = compiled.constraints.len();
    Ok(RunBundle {
        solver: SolverChoice::Baseline,
        form: inst.form,
        compiled,
        x,
        theta,
        duals: vec![0.0; n_constraints],
        converged: true,
        outer_iterations: trace.rows.len(),
        final_max_price_delta: 0.0,
        objective_values,
        trace,
        oracle,
        final_epsilon,
        wall_ms_total,
    })
}

#[allow(clippy::too_many_arguments)]
fn push_baseline_row(
    trace: &mut SolveTrace,
    compiled: &CompiledInstance,
    x: &[f64],
    theta: &[f64],
    delta: f64,
    round_started: Instant,
    ropts: &RunOptions,
    oracle: &Option<OracleResult>,
) -> Result<(), CliError> {
    let mut controller_sq = 0.0;
    let mut agent_sq = 0.0;
    for con in &compiled.constraints {
        let v = con.violation(x);
        match con.side {
            hiergame_core::ConstraintSide::Controller => controller_sq += v * v,
            hiergame_core::ConstraintSide::Agent => agent_sq += v * v,
        }
    }
    let epsilon = match oracle {
        Some(reference) => Some(epsilon_dense(compiled, x, reference)?),
        None => None,
    };
    let outer_iter = trace.rows.len();
    trace.rows.push(TraceRow {
        outer_iter,
        epsilon,
        max_price_delta: delta,
        inner_iters: 0,
        primal_residual: (controller_sq + agent_sq).sqrt(),
        agent_residual: agent_sq.sqrt(),
        controller_residual: controller_sq.sqrt(),
        wall_ms: ropts
            .timings
            .then(|| round_started.elapsed().as_secs_f64() * 1e3),
        allocation_hash: snapshot_hash(x),
        price_hash: snapshot_hash(theta),
    });
    Ok(())
}

/// First outer iteration whose epsilon column crosses each threshold
/// (thresholds and the epsilon sequence share units). `None` when never
/// crossed.
pub fn first_crossings(eps_by_iter: &[f64], thresholds: &[f64]) -> Vec<Option<usize>> {
    thresholds
        .iter()
        .map(|&th| eps_by_iter.iter().position(|&e| e <= th))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub controllers: usize,
    pub agents: usize,
    pub epsilon: f64,
    /// Mean first-crossing outer iteration over the seeds that converged and
    /// crossed; `None` when no seed crossed.
    pub mean_iterations: Option<f64>,
    pub crossed_seeds: usize,
    pub converged_seeds: usize,
    pub total_seeds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "controllers,agents,epsilon,mean_iterations,crossed_seeds,converged_seeds,total_seeds\n",
        );
        for row in &self.rows {
            let mean = row
                .mean_iterations
                .map(|m| m.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.controllers,
                row.agents,
                row.epsilon,
                mean,
                row.crossed_seeds,
                row.converged_seeds,
                row.total_seeds
            ));
        }
        out
    }

    /// Points `(epsilon, mean iterations)` for one network size.
    pub fn points_for(&self, controllers: usize, agents: usize) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.controllers == controllers && r.agents == agents)
            .filter_map(|r| r.mean_iterations.map(|m| (r.epsilon, m)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub kind: ScenarioKind,
    pub params: GenParams,
    pub sizes: Vec<(usize, usize)>,
    /// Relative accuracy targets, strictly decreasing.
    pub epsilons: Vec<f64>,
    /// Seeds `0..n` per size.
    pub seeds: u64,
    pub opts: ExtendedSolveOptions,
    pub oracle_tol: f64,
}

/// For each size and seed: generate the instance, solve once to the price
/// tolerance, and read off the first outer iteration at which the relative
/// accuracy `epsilon / (1 + ||F*||)` crossed each target. Iteration counts
/// are averaged over seeds. Non-convergence of a seed is recorded, not
/// fatal. Sweep cells run in parallel; aggregation order is fixed by the
/// input order, so outputs are deterministic for a given configuration.
pub fn sweep_epsilon(cfg: &SweepConfig) -> Result<SweepTable, CliError> {
    if cfg.epsilons.is_empty() || cfg.epsilons.iter().any(|e| *e <= 0.0 || e.is_nan()) {
        return Err(CliError::Usage("epsilons must be positive".to_string()));
    }
    if cfg.epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::Usage(
            "epsilons must be strictly decreasing".to_string(),
        ));
    }
    if cfg.seeds == 0 {
        return Err(CliError::Usage("need at least one seed".to_string()));
    }

    let cells: Vec<(usize, u64)> = (0..cfg.sizes.len())
        .flat_map(|s| (0..cfg.seeds).map(move |seed| (s, seed)))
        .collect();

    let outcomes: Vec<(usize, Option<Vec<Option<usize>>>)> = cells
        .par_iter()
        .map(|&(size_idx, seed)| {
            let (nc, na) = cfg.sizes[size_idx];
            let crossings = sweep_cell(cfg, nc, na, seed);
            (size_idx, crossings)
        })
        .collect();

    let mut rows = Vec::new();
    for (size_idx, &(nc, na)) in cfg.sizes.iter().enumerate() {
        let runs: Vec<&Option<Vec<Option<usize>>>> = outcomes
            .iter()
            .filter(|(s, _)| *s == size_idx)
            .map(|(_, c)| c)
            .collect();
        let converged_seeds = runs.iter().filter(|r| r.is_some()).count();
        for (t, &eps) in cfg.epsilons.iter().enumerate() {
            let crossings: Vec<usize> = runs
                .iter()
                .filter_map(|r| r.as_ref())
                .filter_map(|c| c[t])
                .collect();
            let mean_iterations = if crossings.is_empty() {
                None
            } else {
                Some(crossings.iter().sum::<usize>() as f64 / crossings.len() as f64)
            };
            rows.push(SweepRow {
                controllers: nc,
                agents: na,
                epsilon: eps,
                mean_iterations,
                crossed_seeds: crossings.len(),
                converged_seeds,
                total_seeds: cfg.seeds as usize,
            });
        }
    }
    Ok(SweepTable { rows })
}

/// One sweep cell: `None` when generation, the oracle, or the solve failed
/// (recorded as a non-converged seed).
fn sweep_cell(cfg: &SweepConfig, nc: usize, na: usize, seed: u64) -> Option<Vec<Option<usize>>> {
    let inst = gen_scenario(cfg.kind, nc, na, &cfg.params, seed).ok()?;
    let oracle = centralized_optimum(&inst, cfg.oracle_tol).ok()?;
    let ropts = RunOptions {
        solver: SolverChoice::for_form(inst.form),
        opts: cfg.opts.clone(),
        with_oracle: false,
        oracle_tol: cfg.oracle_tol,
        timings: false,
    };
    let bundle = run_experiment_against(&inst, &ropts, Some(oracle)).ok()?;
    let norm = bundle.f_star_norm().unwrap_or(0.0);
    let eps_rel: Vec<f64> = bundle
        .trace
        .rows
        .iter()
        .map(|r| r.epsilon.unwrap_or(f64::INFINITY) / (1.0 + norm))
        .collect();
    Some(first_crossings(&eps_rel, &cfg.epsilons))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinFit {
    pub slope: f64,
    pub intercept: f64,
    /// `None` when the fit is degenerate (no variance in iterations).
    pub r_squared: Option<f64>,
}

/// Ordinary least squares of iteration counts against `log10(1/epsilon)`.
/// Needs at least 3 distinct epsilon values.
pub fn fit_linearity(points: &[(f64, f64)]) -> Result<LinFit, CliError> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite epsilons"));
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(CliError::Usage(format!(
            "linearity fit needs >= 3 distinct epsilon values, got {}",
            distinct.len()
        )));
    }
    if points.iter().any(|p| p.0 <= 0.0 || p.0.is_nan()) {
        return Err(CliError::Usage("epsilons must be positive".to_string()));
    }

    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| (1.0 / p.0).log10()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x) * (x - mean_x)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    let r_squared = if ss_tot <= 1e-30 {
        None
    } else {
        let ss_res: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let fitted = intercept + slope * x;
                (y - fitted) * (y - fitted)
            })
            .sum();
        Some(1.0 - ss_res / ss_tot)
    };
    Ok(LinFit {
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_geometric_data_fits_perfectly() {
        // iterations = 2 + 3 * log10(1/eps), exactly linear.
        let points: Vec<(f64, f64)> = (1..=5)
            .map(|d| (10f64.powi(-d), 2.0 + 3.0 * d as f64))
            .collect();
        let fit = fit_linearity(&points).unwrap();
        assert!((fit.slope - 3.0).abs() <= 1e-9);
        assert!((fit.intercept - 2.0).abs() <= 1e-9);
        assert!((fit.r_squared.unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn constant_iterations_reported_degenerate() {
        let points: Vec<(f64, f64)> = (1..=4).map(|d| (10f64.powi(-d), 7.0)).collect();
        let fit = fit_linearity(&points).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert!(fit.r_squared.is_none());
    }

    #[test]
    fn degenerate_epsilon_set_rejected() {
        let points = vec![(1e-1, 3.0), (1e-2, 5.0)];
        assert!(matches!(fit_linearity(&points), Err(CliError::Usage(_))));
        let dup = vec![(1e-1, 3.0), (1e-1, 3.0), (1e-2, 5.0)];
        assert!(matches!(fit_linearity(&dup), Err(CliError::Usage(_))));
    }

    #[test]
    fn first_crossings_are_monotone() {
        let eps = [0.9, 0.5, 0.2, 0.05, 0.01, 0.002];
        let thresholds = [0.5, 0.1, 0.01, 0.001];
        let crossings = first_crossings(&eps, &thresholds);
        assert_eq!(crossings, vec![Some(1), Some(3), Some(4), None]);
        let found: Vec<usize> = crossings.iter().flatten().copied().collect();
        assert!(found.windows(2).all(|w| w[0] <= w[1]));
    }
}
