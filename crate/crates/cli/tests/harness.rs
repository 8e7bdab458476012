//! Harness-level behavior: trace annotation on the closed-form fixture,
//! the uncoordinated baseline, and sweep table shapes.

use std::collections::BTreeMap;
use std::path::Path;

use hiergame::formats::load_instance;
use hiergame::harness::{
    fit_linearity, first_crossings, run_experiment, sweep_epsilon, RunOptions, SolverChoice,
    SweepConfig,
};
use hiergame_core::coupled::ExtendedSolveOptions;
use hiergame_core::mlmf::solve_mlmf;
use hiergame_core::scenario::{GenParams, ScenarioKind};
use hiergame_core::{
    Agent, AgentId, Bounds, CellId, ConstraintKind, Controller, ControllerId, GameForm,
    GameInstance, LinearConstraint, ScalarFn,
};

fn fixture() -> GameInstance {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/basic_quadratic.json");
    load_instance(&path).unwrap().0
}

#[test]
fn fixture_trace_epsilon_decays_by_one_ninth() {
    let inst = fixture();
    let mut ropts = RunOptions::new(SolverChoice::Basic);
    ropts.with_oracle = true;
    let bundle = run_experiment(&inst, &ropts).unwrap_or_else(|f| panic!("{}", f.error));

    // Objective gap (x - 2)^2 with x-error contracting by exactly 1/3:
    // epsilon contracts by exactly 1/9 row to row.
    let eps: Vec<f64> = bundle
        .trace
        .rows
        .iter()
        .map(|r| r.epsilon.unwrap())
        .collect();
    let mut checked = 0;
    for pair in eps.windows(2) {
        if pair[0] >= 1e-8 {
            let ratio = pair[1] / pair[0];
            assert!(
                (ratio - 1.0 / 9.0).abs() <= 1e-6,
                "epsilon ratio {ratio} at {}",
                pair[0]
            );
            checked += 1;
        }
    }
    assert!(checked >= 8);
}

#[test]
fn fixture_sweep_slope_matches_geometric_decay() {
    let inst = fixture();
    let mut ropts = RunOptions::new(SolverChoice::Basic);
    ropts.with_oracle = true;
    let bundle = run_experiment(&inst, &ropts).unwrap_or_else(|f| panic!("{}", f.error));
    let eps: Vec<f64> = bundle
        .trace
        .rows
        .iter()
        .map(|r| r.epsilon.unwrap())
        .collect();

    let thresholds = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
    let crossings = first_crossings(&eps, &thresholds);
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .zip(&crossings)
        .map(|(&th, c)| (th, c.expect("fixture crosses every threshold") as f64))
        .collect();
    // Crossing counts are non-decreasing as epsilon shrinks.
    for pair in points.windows(2) {
        assert!(pair[1].1 >= pair[0].1);
    }
    // Analytic slope: x-error contracts at 1/3, epsilon at 1/9, i.e.
    // 1/log10(9) ~ 1.048 iterations per epsilon decade.
    let fit = fit_linearity(&points).unwrap();
    let analytic = 1.0 / 9.0f64.log10();
    assert!(
        (fit.slope - analytic).abs() <= 0.5,
        "slope {} vs analytic {analytic}",
        fit.slope
    );
}

/// 2 controllers x 1 agent with asymmetric curvatures and a binding capacity:
/// the projection of the uncoordinated point is feasible but not optimal.
fn asymmetric_capacity_instance() -> GameInstance {
    let mut c0_terms = BTreeMap::new();
    c0_terms.insert(AgentId::new("a0"), ScalarFn::quadratic(2.0, 1.0, 0.0).unwrap());
    let mut c1_terms = BTreeMap::new();
    c1_terms.insert(AgentId::new("a0"), ScalarFn::quadratic(1.0, 2.0, 0.0).unwrap());
    let mut cost_terms = BTreeMap::new();
    let mut boxes = BTreeMap::new();
    for c in ["c0", "c1"] {
        cost_terms.insert(
            ControllerId::new(c),
            ScalarFn::quadratic(0.5, 0.0, 0.0).unwrap(),
        );
        boxes.insert(ControllerId::new(c), Bounds::new(0.0, 10.0).unwrap());
    }
    GameInstance {
        form: GameForm::Mlmf,
        seed: None,
        controllers: vec![
            Controller {
                id: ControllerId::new("c0"),
                task_terms: c0_terms,
                demand_constraints: vec![],
            },
            Controller {
                id: ControllerId::new("c1"),
                task_terms: c1_terms,
                demand_constraints: vec![],
            },
        ],
        agents: vec![Agent {
            id: AgentId::new("a0"),
            cost_terms,
            boxes,
            capacity_constraints: vec![LinearConstraint::new(
                vec![
                    (CellId::new("c0", "a0"), 1.0),
                    (CellId::new("c1", "a0"), 1.0),
                ],
                1.0,
                ConstraintKind::LessEqual,
            )
            .unwrap()],
        }],
    }
}

#[test]
fn baseline_matches_mlmf_when_constraints_are_slack() {
    let mut inst = asymmetric_capacity_instance();
    // Loosen the capacity so nothing binds.
    inst.agents[0].capacity_constraints[0].rhs = 100.0;

    let mut ropts = RunOptions::new(SolverChoice::Baseline);
    ropts.with_oracle = true;
    let baseline = run_experiment(&inst, &ropts).unwrap_or_else(|f| panic!("{}", f.error));
    let mlmf = solve_mlmf(&inst, &ExtendedSolveOptions::default()).unwrap();

    let compiled = inst.compile().unwrap();
    let mlmf_dense = compiled.dense_from_allocation(&mlmf.allocation).unwrap();
    for (c, x) in baseline.x.iter().enumerate() {
        assert!((x - mlmf_dense[c]).abs() <= 1e-6);
    }
    assert!(baseline.final_epsilon.unwrap() <= 1e-5);
}

#[test]
fn baseline_stays_suboptimal_under_binding_capacity() {
    let inst = asymmetric_capacity_instance();

    let mut ropts = RunOptions::new(SolverChoice::Baseline);
    ropts.with_oracle = true;
    let baseline = run_experiment(&inst, &ropts).unwrap_or_else(|f| panic!("{}", f.error));
    // Uncoordinated best responses land on the task targets (1, 2); the
    // Euclidean projection onto x0 + x1 <= 1 gives (0, 1), while the optimum
    // is (1/3, 2/3). The objective gap persists.
    assert!((baseline.x[0] - 0.0).abs() <= 1e-6, "{:?}", baseline.x);
    assert!((baseline.x[1] - 1.0).abs() <= 1e-6, "{:?}", baseline.x);
    let eps = baseline.final_epsilon.unwrap();
    let expected = (10.0f64 / 9.0).powi(2) + (7.0f64 / 9.0).powi(2);
    assert!(
        (eps - expected.sqrt()).abs() <= 1e-6,
        "baseline eps {eps} vs expected {}",
        expected.sqrt()
    );

    // The raw (pre-projection) rows violate the capacity; the final row is
    // feasible.
    let rows = &baseline.trace.rows;
    assert!(rows[rows.len() - 2].primal_residual > 1.0);
    assert!(rows[rows.len() - 1].primal_residual <= 1e-8);

    // The coordinated solver closes the gap on the same instance.
    let mut game_opts = RunOptions::new(SolverChoice::Mlmf);
    game_opts.with_oracle = true;
    let game = run_experiment(&inst, &game_opts).unwrap_or_else(|f| panic!("{}", f.error));
    assert!(game.final_epsilon.unwrap() <= 1e-6);
}

#[test]
fn sweep_single_size_single_epsilon_is_one_row() {
    let cfg = SweepConfig {
        kind: ScenarioKind::CrowdSensing,
        params: GenParams::default(),
        sizes: vec![(2, 5)],
        epsilons: vec![1e-2],
        seeds: 2,
        opts: ExtendedSolveOptions::default(),
        oracle_tol: 1e-9,
    };
    let table = sweep_epsilon(&cfg).unwrap();
    assert_eq!(table.rows.len(), 1);
    let row = &table.rows[0];
    assert_eq!((row.controllers, row.agents), (2, 5));
    assert_eq!(row.crossed_seeds, 2);
    assert!(row.mean_iterations.is_some());
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 2);
}

/// One controller over `n` i.i.d. quadratic agents with a binding demand
/// (125% of the summed targets), so the constrained optimum scales with the
/// agent count and relative accuracy targets are size-comparable.
fn coupled_family_instance(n_agents: usize, seed: u64) -> GameInstance {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut task_terms = BTreeMap::new();
    let mut agents = Vec::new();
    let mut targets_sum = 0.0;
    for i in 0..n_agents {
        let a: f64 = rng.gen_range(0.5..1.5);
        let b: f64 = rng.gen_range(1.0..3.0);
        let ratio: f64 = rng.gen_range(2.0..3.0);
        targets_sum += b;
        let aid = AgentId::new(format!("a{i}"));
        task_terms.insert(aid.clone(), ScalarFn::quadratic(a, b, 0.0).unwrap());
        let mut cost_terms = BTreeMap::new();
        cost_terms.insert(
            ControllerId::new("c0"),
            ScalarFn::quadratic(ratio * a, 0.0, 0.0).unwrap(),
        );
        let mut boxes = BTreeMap::new();
        boxes.insert(ControllerId::new("c0"), Bounds::new(0.0, 10.0).unwrap());
        agents.push(Agent {
            id: aid,
            cost_terms,
            boxes,
            capacity_constraints: vec![],
        });
    }
    let demand = LinearConstraint::new(
        (0..n_agents)
            .map(|i| (CellId::new("c0", format!("a{i}")), -1.0))
            .collect(),
        -1.25 * targets_sum,
        ConstraintKind::LessEqual,
    )
    .unwrap();
    GameInstance {
        form: GameForm::SingleControllerCoupled,
        seed: Some(seed),
        controllers: vec![Controller {
            id: ControllerId::new("c0"),
            task_terms,
            demand_constraints: vec![demand],
        }],
        agents,
    }
}

#[test]
fn coupled_outer_counts_are_size_invariant() {
    // Scaling the agent count with i.i.d. per-agent parameters leaves the
    // outer iteration count for a fixed relative accuracy within +-2.
    let mut means = Vec::new();
    for &n_agents in &[10usize, 40, 100] {
        let mut crossings = Vec::new();
        for seed in 0..3u64 {
            let inst = coupled_family_instance(n_agents, seed);
            let mut ropts = RunOptions::new(SolverChoice::Coupled);
            ropts.with_oracle = true;
            let bundle = run_experiment(&inst, &ropts).unwrap_or_else(|f| panic!("{}", f.error));
            let norm = bundle.f_star_norm().unwrap();
            let crossing = bundle
                .trace
                .rows
                .iter()
                .position(|r| r.epsilon.unwrap() / (1.0 + norm) <= 1e-3)
                .expect("crosses 1e-3");
            crossings.push(crossing as f64);
        }
        means.push(crossings.iter().sum::<f64>() / crossings.len() as f64);
    }
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(0.0, f64::max);
    assert!(hi - lo <= 2.0, "coupled-form spread {means:?}");
}

#[test]
fn baseline_runs_are_deterministic() {
    let inst = asymmetric_capacity_instance();
    let ropts = RunOptions::new(SolverChoice::Baseline);
    let a = run_experiment(&inst, &ropts).unwrap_or_else(|f| panic!("{}", f.error));
    let b = run_experiment(&inst, &ropts).unwrap_or_else(|f| panic!("{}", f.error));
    assert_eq!(a.x, b.x);
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
}

#[test]
fn sweep_rejects_nondecreasing_epsilons() {
    let cfg = SweepConfig {
        kind: ScenarioKind::CrowdSensing,
        params: GenParams::default(),
        sizes: vec![(2, 5)],
        epsilons: vec![1e-3, 1e-2],
        seeds: 1,
        opts: ExtendedSolveOptions::default(),
        oracle_tol: 1e-9,
    };
    assert!(sweep_epsilon(&cfg).is_err());
}
