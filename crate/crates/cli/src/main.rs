//! Command-line front end: generate instances, run solvers against the
//! centralized oracle, sweep iteration counts against accuracy targets, and
//! verify allocations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hiergame::error::CliError;
use hiergame::formats::{
    self, allocation_file, load_instance, save_instance, AllocationFile, KktSummary, OptionsEcho,
    OracleSummary, SizeFit, SolveSummary, SweepSummary,
};
use hiergame::harness::{
    fit_linearity, run_experiment, RunOptions, SolverChoice, SweepConfig, SweepTable,
    sweep_epsilon,
};
use hiergame_core::coupled::ExtendedSolveOptions;
use hiergame_core::oracle::{centralized_optimum, kkt_check_compiled};
use hiergame_core::scenario::{GenParams, ScenarioKind};
use hiergame_core::epsilon as epsilon_metric;

#[derive(Parser)]
#[command(
    name = "hiergame",
    about = "Hierarchical incentive-game solvers: marginal-cost pricing with ADMM inner loops",
    version
)]
struct Cli {
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded scenario instance and write it as JSON.
    Generate(GenerateArgs),
    /// Solve an instance, optionally against the centralized oracle.
    Solve(SolveArgs),
    /// Sweep iterations-to-accuracy over network sizes and seeds.
    Sweep(SweepArgs),
    /// Verify an allocation (and optional multipliers) against the oracle.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario kind: crowd_sensing, caching, vehicular, or fog.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    controllers: usize,
    #[arg(long)]
    agents: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Draw concave log costs (outside the guaranteed-convergence regime).
    #[arg(long)]
    out_of_regime: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    /// basic, coupled, mlmf, or baseline.
    #[arg(long)]
    solver: String,
    /// Price tolerance; also used for the inner primal/dual tolerances.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Compute the centralized optimum and annotate the trace with epsilon.
    #[arg(long)]
    oracle: bool,
    /// Write the per-iteration trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the machine-readable summary JSON here.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Write the final allocation (with prices and multipliers) here.
    #[arg(long)]
    alloc_out: Option<PathBuf>,
    /// Write the oracle's optimum (allocation, values, multipliers) here;
    /// implies --oracle.
    #[arg(long)]
    oracle_out: Option<PathBuf>,
    /// Record per-iteration wall times in the trace (nondeterministic).
    #[arg(long)]
    timings: bool,
    /// Override the outer iteration budget.
    #[arg(long)]
    max_outer: Option<usize>,
    /// Penalty scale of the inner consensus loop.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario kind: crowd_sensing, caching, vehicular, or fog.
    #[arg(long)]
    kind: String,
    /// Comma-separated sizes, e.g. 2x10,5x50,10x100.
    #[arg(long)]
    sizes: String,
    /// Either a decade range 1e-1:1e-5 or a comma list 1e-1,3e-2,1e-3.
    /// Targets are relative accuracies epsilon / (1 + ||F*||).
    #[arg(long)]
    epsilons: String,
    /// Number of seeds per size (0..n).
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write per-size linearity fits here.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Allocation JSON (a solve summary is also accepted).
    #[arg(long)]
    allocation: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(64);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    init_threads();
    let quiet = cli.quiet;
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args, quiet),
        Command::Solve(args) => cmd_solve(args, quiet),
        Command::Sweep(args) => cmd_sweep(args, quiet),
        Command::Verify(args) => cmd_verify(args, quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// HIERGAME_THREADS caps internal parallelism (0 or unset = auto).
fn init_threads() {
    if let Ok(value) = std::env::var("HIERGAME_THREADS") {
        if let Ok(n) = value.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn progress(quiet: bool, message: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", message.as_ref());
    }
}

fn parse_kind(s: &str) -> Result<ScenarioKind, CliError> {
    match s.replace('-', "_").as_str() {
        "crowd_sensing" => Ok(ScenarioKind::CrowdSensing),
        "caching" => Ok(ScenarioKind::Caching),
        "vehicular" => Ok(ScenarioKind::Vehicular),
        "fog" => Ok(ScenarioKind::Fog),
        other => Err(CliError::Usage(format!(
            "unknown kind '{other}' (expected crowd_sensing, caching, vehicular, or fog)"
        ))),
    }
}

fn cmd_generate(args: GenerateArgs, quiet: bool) -> Result<(), CliError> {
    let kind = parse_kind(&args.kind)?;
    let params = GenParams {
        out_of_regime: args.out_of_regime,
    };
    let inst = hiergame_core::scenario::gen_scenario(
        kind,
        args.controllers,
        args.agents,
        &params,
        args.seed,
    )
    .map_err(|e| match e {
        hiergame_core::SolveError::InvalidParameter { message } => CliError::Usage(message),
        other => CliError::from(other),
    })?;
    save_instance(&inst, &args.out)?;
    progress(
        quiet,
        format!(
            "generated {} instance ({} controllers x {} agents, form {}, seed {}) -> {}",
            kind.name(),
            args.controllers,
            args.agents,
            inst.form.name(),
            args.seed,
            args.out.display()
        ),
    );
    Ok(())
}

fn build_options(tol: f64, max_outer: Option<usize>, rho: f64) -> Result<ExtendedSolveOptions, CliError> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(CliError::Usage("tol must be > 0".to_string()));
    }
    let mut opts = ExtendedSolveOptions::default();
    opts.outer.tol_price = tol;
    opts.admm.tol_primal = tol;
    opts.admm.tol_dual = tol;
    opts.admm.rho = rho;
    if let Some(max) = max_outer {
        opts.outer.max_outer = max;
    }
    Ok(opts)
}

fn options_echo(opts: &ExtendedSolveOptions, oracle_tol: Option<f64>) -> OptionsEcho {
    OptionsEcho {
        tol_price: opts.outer.tol_price,
        max_outer: opts.outer.max_outer,
        rho: opts.admm.rho,
        tol_primal: opts.admm.tol_primal,
        tol_dual: opts.admm.tol_dual,
        max_inner: opts.admm.max_inner,
        oracle_tol,
    }
}

fn cmd_solve(args: SolveArgs, quiet: bool) -> Result<(), CliError> {
    let solver = SolverChoice::parse(&args.solver)?;
    let (inst, warnings) = load_instance(&args.instance)?;
    for w in &warnings {
        progress(quiet, format!("warning: {w}"));
    }
    let opts = build_options(args.tol, args.max_outer, args.rho)?;
    let oracle_tol = (args.tol * 0.1).clamp(1e-12, 1e-9);
    let with_oracle = args.oracle || args.oracle_out.is_some();
    let ropts = RunOptions {
        solver,
        opts: opts.clone(),
        with_oracle,
        oracle_tol,
        timings: args.timings,
    };
    progress(
        quiet,
        format!(
            "solving {} (form {}) with the {} solver",
            args.instance.display(),
            inst.form.name(),
            solver.name()
        ),
    );
    let bundle = match run_experiment(&inst, &ropts) {
        Ok(bundle) => bundle,
        Err(failure) => {
            // The partial trace is always written.
            if let Some(path) = &args.trace {
                failure.partial_trace.write_csv(path)?;
            }
            return Err(failure.error);
        }
    };

    if let Some(path) = &args.trace {
        bundle.trace.write_csv(path)?;
        progress(quiet, format!("trace -> {}", path.display()));
    }

    let alloc = allocation_file(
        &bundle.compiled,
        &bundle.x,
        Some(&bundle.theta),
        Some(&bundle.duals),
    );
    if let Some(path) = &args.alloc_out {
        formats::write_json(&alloc, path)?;
        progress(quiet, format!("allocation -> {}", path.display()));
    }

    if let Some(path) = &args.oracle_out {
        let oracle = bundle.oracle.as_ref().expect("oracle requested");
        let file = formats::OracleFile::from_result(&bundle.compiled, oracle)?;
        formats::write_json(&file, path)?;
        progress(quiet, format!("oracle -> {}", path.display()));
    }

    if let Some(path) = &args.summary {
        let oracle_summary = bundle.oracle.as_ref().map(|o| {
            let kkt = kkt_check_compiled(&bundle.compiled, &o.allocation, &o.multipliers)
                .ok()
                .map(|r| KktSummary {
                    stationarity: r.stationarity,
                    feasibility: r.feasibility,
                    complementarity: r.complementarity,
                });
            OracleSummary {
                objective_total: o.objective_total,
                controller_values: o.controller_values.clone(),
                kkt,
            }
        });
        let summary = SolveSummary {
            command: "solve".to_string(),
            instance: Some(args.instance.display().to_string()),
            solver: solver.name().to_string(),
            form: bundle.form.name().to_string(),
            seed: inst.seed,
            fingerprint: format!("{:016x}", bundle.compiled.fingerprint),
            options: options_echo(&opts, with_oracle.then_some(oracle_tol)),
            converged: bundle.converged,
            outer_iterations: bundle.outer_iterations,
            final_max_price_delta: bundle.final_max_price_delta,
            wall_ms_total: bundle.wall_ms_total,
            final_epsilon: bundle.final_epsilon,
            final_epsilon_relative: bundle.final_epsilon_relative(),
            oracle: oracle_summary,
            objective_values: bundle.objective_values.clone(),
            allocation: alloc,
        };
        formats::write_json(&summary, path)?;
        progress(quiet, format!("summary -> {}", path.display()));
    }

    let eps_note = match (bundle.final_epsilon, bundle.final_epsilon_relative()) {
        (Some(eps), Some(rel)) => format!(", epsilon {eps:.3e} (relative {rel:.3e})"),
        _ => String::new(),
    };
    println!(
        "converged in {} outer iterations, final max price delta {:.3e}{eps_note}",
        bundle.outer_iterations, bundle.final_max_price_delta
    );
    Ok(())
}

fn parse_sizes(s: &str) -> Result<Vec<(usize, usize)>, CliError> {
    let mut sizes = Vec::new();
    for part in s.split(',') {
        let (nc, na) = part
            .trim()
            .split_once('x')
            .ok_or_else(|| CliError::Usage(format!("size '{part}' is not of the form NxM")))?;
        let nc = nc
            .parse()
            .map_err(|_| CliError::Usage(format!("bad controller count in '{part}'")))?;
        let na = na
            .parse()
            .map_err(|_| CliError::Usage(format!("bad agent count in '{part}'")))?;
        sizes.push((nc, na));
    }
    if sizes.is_empty() {
        return Err(CliError::Usage("no sizes given".to_string()));
    }
    Ok(sizes)
}

fn parse_epsilons(s: &str) -> Result<Vec<f64>, CliError> {
    let values: Vec<f64> = if let Some((hi, lo)) = s.split_once(':') {
        let hi: f64 = hi
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("bad epsilon '{hi}'")))?;
        let lo: f64 = lo
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("bad epsilon '{lo}'")))?;
        if hi <= lo || lo <= 0.0 || hi.is_nan() {
            return Err(CliError::Usage(
                "epsilon range must satisfy hi > lo > 0".to_string(),
            ));
        }
        let decades = (hi / lo).log10();
        let steps = decades.round() as usize;
        if steps == 0 || (decades - steps as f64).abs() > 1e-9 {
            return Err(CliError::Usage(
                "epsilon range endpoints must differ by whole decades; use a comma list otherwise"
                    .to_string(),
            ));
        }
        (0..=steps).map(|i| hi * 10f64.powi(-(i as i32))).collect()
    } else {
        s.split(',')
            .map(|part| {
                part.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad epsilon '{part}'")))
            })
            .collect::<Result<_, _>>()?
    };
    Ok(values)
}

fn cmd_sweep(args: SweepArgs, quiet: bool) -> Result<(), CliError> {
    let kind = parse_kind(&args.kind)?;
    let sizes = parse_sizes(&args.sizes)?;
    let epsilons = parse_epsilons(&args.epsilons)?;
    let opts = build_options(args.tol, None, 1.0)?;
    let cfg = SweepConfig {
        kind,
        params: GenParams::default(),
        sizes: sizes.clone(),
        epsilons: epsilons.clone(),
        seeds: args.seeds,
        opts,
        oracle_tol: 1e-9,
    };
    progress(
        quiet,
        format!(
            "sweeping {} over {} sizes x {} seeds x {} accuracy targets",
            kind.name(),
            sizes.len(),
            args.seeds,
            epsilons.len()
        ),
    );
    let table: SweepTable = sweep_epsilon(&cfg)?;
    std::fs::write(&args.out, table.to_csv())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", args.out.display())))?;
    progress(quiet, format!("sweep table -> {}", args.out.display()));

    if let Some(path) = &args.summary {
        let mut fits = Vec::new();
        for &(nc, na) in &sizes {
            let points = table.points_for(nc, na);
            if let Ok(fit) = fit_linearity(&points) {
                fits.push(SizeFit {
                    controllers: nc,
                    agents: na,
                    slope: fit.slope,
                    intercept: fit.intercept,
                    r_squared: fit.r_squared,
                });
            }
        }
        let summary = SweepSummary {
            command: "sweep".to_string(),
            kind: kind.name().to_string(),
            sizes,
            epsilons,
            seeds: args.seeds,
            tol: args.tol,
            fits,
        };
        formats::write_json(&summary, path)?;
        progress(quiet, format!("fit summary -> {}", path.display()));
    }
    println!("sweep complete: {} rows", table.rows.len());
    Ok(())
}

fn load_allocation_file(path: &Path) -> Result<AllocationFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    // Accept either a bare allocation file or a full solve summary.
    if let Ok(alloc) = serde_json::from_str::<AllocationFile>(&text) {
        if !alloc.cells.is_empty() {
            return Ok(alloc);
        }
    }
    let summary: SolveSummary = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(vec![format!("{}: {e}", path.display())]))?;
    Ok(summary.allocation)
}

fn cmd_verify(args: VerifyArgs, quiet: bool) -> Result<(), CliError> {
    if !args.tol.is_finite() || args.tol <= 0.0 {
        return Err(CliError::Usage("tol must be > 0".to_string()));
    }
    let (inst, warnings) = load_instance(&args.instance)?;
    for w in &warnings {
        progress(quiet, format!("warning: {w}"));
    }
    let alloc_file = load_allocation_file(&args.allocation)?;
    let compiled = inst.compile()?;
    let allocation = alloc_file.to_allocation();
    let x = compiled.dense_from_allocation(&allocation)?;

    // Feasibility of the candidate: boxes plus coupling constraints.
    let mut feas_sq = 0.0;
    for (c, cell) in compiled.cells.iter().enumerate() {
        let v = (cell.bounds.lo() - x[c]).max(0.0) + (x[c] - cell.bounds.hi()).max(0.0);
        feas_sq += v * v;
    }
    for con in &compiled.constraints {
        let v = con.violation(&x);
        feas_sq += v * v;
    }
    let feasibility = feas_sq.sqrt();

    progress(quiet, "computing centralized optimum for comparison");
    let oracle = centralized_optimum(&inst, (args.tol * 1e-2).min(1e-8))?;
    let eps = epsilon_metric(&inst, &allocation, &oracle)?;
    let f_norm = oracle
        .controller_values
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    let eps_rel = eps / (1.0 + f_norm);

    println!("feasibility residual: {feasibility:.3e}");
    println!("epsilon vs oracle: {eps:.3e} (relative {eps_rel:.3e})");

    let mut pass = feasibility <= args.tol && eps_rel <= args.tol;
    if let Some(duals) = alloc_file.dense_duals(&compiled)? {
        let report = kkt_check_compiled(&compiled, &allocation, &duals)?;
        println!(
            "kkt residuals: stationarity {:.3e}, feasibility {:.3e}, complementarity {:.3e}",
            report.stationarity, report.feasibility, report.complementarity
        );
        pass = pass && report.pass(args.tol);
    }

    if pass {
        println!("verify: PASS (tol {:.1e})", args.tol);
        Ok(())
    } else {
        println!("verify: FAIL (tol {:.1e})", args.tol);
        Err(CliError::Validation(vec![format!(
            "allocation fails verification at tol {:.1e}",
            args.tol
        )]))
    }
}
