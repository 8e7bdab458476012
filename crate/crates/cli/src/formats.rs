//! JSON file formats: instances, allocations, and result summaries.
//!
//! One instance schema serves all three game forms; the `form` field selects
//! solver compatibility. Scalar functions serialize as records tagged by
//! `family`, e.g. `{"family":"quadratic","a":1.0,"b":2.0,"c":0.0}`.
//! Constraints live in a flat top-level list, each tagged with its owning
//! side (`controller` demand constraints, `agent` capacity constraints).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hiergame_core::admm::DualState;
use hiergame_core::mlmf::TwoSidedDuals;
use hiergame_core::{
    Agent, AgentId, Allocation, Bounds, CellId, CompiledInstance, ConstraintKind, ConstraintSide,
    Controller, ControllerId, GameForm, GameInstance, LinearConstraint, PriceProfile, ScalarFn,
};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FnSpec {
    Quadratic { a: f64, b: f64, c: f64 },
    Linear { s: f64, c: f64 },
    InvShannon { n0: f64, w: f64 },
    LogConcaveCost { alpha: f64, beta: f64 },
    PowerLaw { a: f64, p: f64 },
    Sum { terms: Vec<FnSpec> },
}

impl FnSpec {
    pub fn to_scalar(&self) -> Result<ScalarFn, CliError> {
        let fn_err = |e: hiergame_core::FnError| CliError::Validation(vec![e.to_string()]);
        match self {
            FnSpec::Quadratic { a, b, c } => ScalarFn::quadratic(*a, *b, *c).map_err(fn_err),
            FnSpec::Linear { s, c } => ScalarFn::linear(*s, *c).map_err(fn_err),
            FnSpec::InvShannon { n0, w } => ScalarFn::inv_shannon(*n0, *w).map_err(fn_err),
            FnSpec::LogConcaveCost { alpha, beta } => {
                ScalarFn::log_concave_cost(*alpha, *beta).map_err(fn_err)
            }
            FnSpec::PowerLaw { a, p } => ScalarFn::power_law(*a, *p).map_err(fn_err),
            FnSpec::Sum { terms } => {
                let terms = terms
                    .iter()
                    .map(FnSpec::to_scalar)
                    .collect::<Result<Vec<_>, _>>()?;
                ScalarFn::sum(terms).map_err(fn_err)
            }
        }
    }

    pub fn from_scalar(f: &ScalarFn) -> FnSpec {
        match f {
            ScalarFn::Quadratic { a, b, c } => FnSpec::Quadratic { a: *a, b: *b, c: *c },
            ScalarFn::Linear { s, c } => FnSpec::Linear { s: *s, c: *c },
            ScalarFn::InvShannon { n0, w } => FnSpec::InvShannon { n0: *n0, w: *w },
            ScalarFn::LogConcaveCost { alpha, beta } => FnSpec::LogConcaveCost {
                alpha: *alpha,
                beta: *beta,
            },
            ScalarFn::PowerLaw { a, p } => FnSpec::PowerLaw { a: *a, p: *p },
            ScalarFn::Sum(terms) => FnSpec::Sum {
                terms: terms.iter().map(FnSpec::from_scalar).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct BoundsSpec {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub id: String,
    pub task_terms: BTreeMap<String, FnSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    pub cost_terms: BTreeMap<String, FnSpec>,
    pub boxes: BTreeMap<String, BoundsSpec>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SideSpec {
    Controller,
    Agent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OwnerSpec {
    pub side: SideSpec,
    pub id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermSpec {
    pub controller: String,
    pub agent: String,
    pub coef: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub owner: OwnerSpec,
    pub terms: Vec<TermSpec>,
    pub rhs: f64,
    /// `"eq"` or `"le"`.
    pub kind: String,
}

/// The single on-disk instance schema for all three forms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    /// `"basic"`, `"single-controller-coupled"`, or `"mlmf"`.
    pub form: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub controllers: Vec<ControllerSpec>,
    pub agents: Vec<AgentSpec>,
    pub constraints: Vec<ConstraintSpec>,
}

fn form_to_str(form: GameForm) -> &'static str {
    form.name()
}

fn form_from_str(s: &str) -> Result<GameForm, CliError> {
    match s {
        "basic" => Ok(GameForm::Basic),
        "single-controller-coupled" => Ok(GameForm::SingleControllerCoupled),
        "mlmf" => Ok(GameForm::Mlmf),
        other => Err(CliError::Validation(vec![format!(
            "unknown form '{other}' (expected basic, single-controller-coupled, or mlmf)"
        )])),
    }
}

fn kind_to_str(kind: ConstraintKind) -> &'static str {
    match kind {
        ConstraintKind::Equality => "eq",
        ConstraintKind::LessEqual => "le",
    }
}

fn kind_from_str(s: &str) -> Result<ConstraintKind, CliError> {
    match s {
        "eq" => Ok(ConstraintKind::Equality),
        "le" => Ok(ConstraintKind::LessEqual),
        other => Err(CliError::Validation(vec![format!(
            "unknown constraint kind '{other}' (expected eq or le)"
        )])),
    }
}

impl InstanceFile {
    pub fn from_instance(inst: &GameInstance) -> InstanceFile {
        let controllers = inst
            .controllers
            .iter()
            .map(|c| ControllerSpec {
                id: c.id.as_str().to_string(),
                task_terms: c
                    .task_terms
                    .iter()
                    .map(|(a, f)| (a.as_str().to_string(), FnSpec::from_scalar(f)))
                    .collect(),
            })
            .collect();
        let agents = inst
            .agents
            .iter()
            .map(|a| AgentSpec {
                id: a.id.as_str().to_string(),
                cost_terms: a
                    .cost_terms
                    .iter()
                    .map(|(c, g)| (c.as_str().to_string(), FnSpec::from_scalar(g)))
                    .collect(),
                boxes: a
                    .boxes
                    .iter()
                    .map(|(c, b)| {
                        (
                            c.as_str().to_string(),
                            BoundsSpec {
                                lo: b.lo(),
                                hi: b.hi(),
                            },
                        )
                    })
                    .collect(),
            })
            .collect();
        let mut constraints = Vec::new();
        for c in &inst.controllers {
            for con in &c.demand_constraints {
                constraints.push(constraint_spec(
                    con,
                    SideSpec::Controller,
                    c.id.as_str().to_string(),
                ));
            }
        }
        for a in &inst.agents {
            for con in &a.capacity_constraints {
                constraints.push(constraint_spec(con, SideSpec::Agent, a.id.as_str().to_string()));
            }
        }
        InstanceFile {
            form: form_to_str(inst.form).to_string(),
            seed: inst.seed,
            controllers,
            agents,
            constraints,
        }
    }

    pub fn into_instance(self) -> Result<GameInstance, CliError> {
        let form = form_from_str(&self.form)?;
        let mut controllers = Vec::with_capacity(self.controllers.len());
        for spec in &self.controllers {
            let mut task_terms = BTreeMap::new();
            for (agent, f) in &spec.task_terms {
                task_terms.insert(AgentId::new(agent.clone()), f.to_scalar()?);
            }
            controllers.push(Controller {
                id: ControllerId::new(spec.id.clone()),
                task_terms,
                demand_constraints: Vec::new(),
            });
        }
        let mut agents = Vec::with_capacity(self.agents.len());
        for spec in &self.agents {
            let mut cost_terms = BTreeMap::new();
            for (controller, g) in &spec.cost_terms {
                cost_terms.insert(ControllerId::new(controller.clone()), g.to_scalar()?);
            }
            let mut boxes = BTreeMap::new();
            for (controller, b) in &spec.boxes {
                let bounds = Bounds::new(b.lo, b.hi)
                    .map_err(|e| CliError::Validation(vec![e.to_string()]))?;
                boxes.insert(ControllerId::new(controller.clone()), bounds);
            }
            agents.push(Agent {
                id: AgentId::new(spec.id.clone()),
                cost_terms,
                boxes,
                capacity_constraints: Vec::new(),
            });
        }
        for spec in &self.constraints {
            let terms = spec
                .terms
                .iter()
                .map(|t| (CellId::new(t.controller.clone(), t.agent.clone()), t.coef))
                .collect();
            let con = LinearConstraint::new(terms, spec.rhs, kind_from_str(&spec.kind)?)
                .map_err(|e| CliError::Validation(vec![e.to_string()]))?;
            match spec.owner.side {
                SideSpec::Controller => {
                    let owner = controllers
                        .iter_mut()
                        .find(|c| c.id.as_str() == spec.owner.id)
                        .ok_or_else(|| {
                            CliError::Validation(vec![format!(
                                "constraint owner controller '{}' not declared",
                                spec.owner.id
                            )])
                        })?;
                    owner.demand_constraints.push(con);
                }
                SideSpec::Agent => {
                    let owner = agents
                        .iter_mut()
                        .find(|a| a.id.as_str() == spec.owner.id)
                        .ok_or_else(|| {
                            CliError::Validation(vec![format!(
                                "constraint owner agent '{}' not declared",
                                spec.owner.id
                            )])
                        })?;
                    owner.capacity_constraints.push(con);
                }
            }
        }
        Ok(GameInstance {
            form,
            seed: self.seed,
            controllers,
            agents,
        })
    }
}

fn constraint_spec(con: &LinearConstraint, side: SideSpec, id: String) -> ConstraintSpec {
    ConstraintSpec {
        owner: OwnerSpec { side, id },
        terms: con
            .terms
            .iter()
            .map(|(cell, coef)| TermSpec {
                controller: cell.controller.as_str().to_string(),
                agent: cell.agent.as_str().to_string(),
                coef: *coef,
            })
            .collect(),
        rhs: con.rhs,
        kind: kind_to_str(con.kind).to_string(),
    }
}

/// Loads and validates an instance file. Validation warnings are returned
/// alongside; violations are an error.
pub fn load_instance(path: &Path) -> Result<(GameInstance, Vec<String>), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let file: InstanceFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(vec![format!("{}: {e}", path.display())]))?;
    let inst = file.into_instance()?;
    let report = inst.validate();
    if !report.is_ok() {
        return Err(CliError::Validation(report.violations));
    }
    Ok((inst, report.warnings))
}

pub fn save_instance(inst: &GameInstance, path: &Path) -> Result<(), CliError> {
    let file = InstanceFile::from_instance(inst);
    write_json(&file, path)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// One cell's resource level (and price, when known) in result files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellValue {
    pub controller: String,
    pub agent: String,
    pub x: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta: Option<f64>,
}

/// One constraint multiplier in result files, addressed by owner and the
/// constraint's index within that owner's list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualValue {
    pub side: SideSpec,
    pub owner: String,
    pub index: usize,
    pub value: f64,
}

/// Allocation file: accepted by `verify`, embedded in solve summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationFile {
    pub cells: Vec<CellValue>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub duals: Option<Vec<DualValue>>,
}

impl AllocationFile {
    pub fn to_allocation(&self) -> Allocation {
        Allocation {
            x: self
                .cells
                .iter()
                .map(|c| (CellId::new(c.controller.clone(), c.agent.clone()), c.x))
                .collect(),
        }
    }

    pub fn to_prices(&self) -> Option<PriceProfile> {
        if self.cells.iter().any(|c| c.theta.is_none()) {
            return None;
        }
        Some(PriceProfile {
            theta: self
                .cells
                .iter()
                .map(|c| {
                    (
                        CellId::new(c.controller.clone(), c.agent.clone()),
                        c.theta.expect("checked above"),
                    )
                })
                .collect(),
        })
    }

    /// Maps the owner-addressed duals onto the compiled constraint order.
    pub fn dense_duals(&self, compiled: &CompiledInstance) -> Result<Option<Vec<f64>>, CliError> {
        let Some(duals) = &self.duals else {
            return Ok(None);
        };
        let mut dense = vec![0.0; compiled.constraints.len()];
        let mut seen = vec![false; compiled.constraints.len()];
        for d in duals {
            let side = match d.side {
                SideSpec::Controller => ConstraintSide::Controller,
                SideSpec::Agent => ConstraintSide::Agent,
            };
            let label_prefix = format!(
                "{}/{}[{}]",
                d.owner,
                match side {
                    ConstraintSide::Controller => "demand",
                    ConstraintSide::Agent => "capacity",
                },
                d.index
            );
            let k = compiled
                .constraints
                .iter()
                .position(|con| con.side == side && con.label == label_prefix)
                .ok_or_else(|| {
                    CliError::Validation(vec![format!("dual references unknown constraint {label_prefix}")])
                })?;
            dense[k] = d.value;
            seen[k] = true;
        }
        if !seen.iter().all(|s| *s) {
            return Err(CliError::Validation(vec![
                "duals list does not cover every constraint".to_string(),
            ]));
        }
        Ok(Some(dense))
    }
}

/// Builds the result cells/duals arrays from dense solver output.
pub fn allocation_file(
    compiled: &CompiledInstance,
    x: &[f64],
    theta: Option<&[f64]>,
    duals: Option<&[f64]>,
) -> AllocationFile {
    let cells = compiled
        .cells
        .iter()
        .enumerate()
        .map(|(c, cell)| CellValue {
            controller: cell.id.controller.as_str().to_string(),
            agent: cell.id.agent.as_str().to_string(),
            x: x[c],
            theta: theta.map(|t| t[c]),
        })
        .collect();
    let duals = duals.map(|lambda| {
        compiled
            .constraints
            .iter()
            .enumerate()
            .map(|(k, con)| {
                let (side, owner) = match con.side {
                    ConstraintSide::Controller => (
                        SideSpec::Controller,
                        con.label.split('/').next().unwrap_or("").to_string(),
                    ),
                    ConstraintSide::Agent => (
                        SideSpec::Agent,
                        con.label.split('/').next().unwrap_or("").to_string(),
                    ),
                };
                let index = con
                    .label
                    .rsplit('[')
                    .next()
                    .and_then(|s| s.strip_suffix(']'))
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(k);
                DualValue {
                    side,
                    owner,
                    index,
                    value: lambda[k],
                }
            })
            .collect()
    });
    AllocationFile { cells, duals }
}

/// Converts solver dual payloads to a dense vector in compiled order.
pub fn dense_from_dual_state(duals: &DualState) -> Vec<f64> {
    duals.lambda.clone()
}

pub fn dense_from_two_sided(compiled: &CompiledInstance, duals: &TwoSidedDuals) -> Vec<f64> {
    let mut dense = vec![0.0; compiled.constraints.len()];
    for (k, v) in duals
        .controller_duals
        .iter()
        .chain(duals.agent_duals.iter())
    {
        dense[*k] = *v;
    }
    dense
}

/// On-disk form of a centralized-oracle result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleFile {
    /// Hex content fingerprint of the instance the optimum belongs to.
    pub fingerprint: String,
    pub objective_total: f64,
    pub controller_values: Vec<f64>,
    #[serde(flatten)]
    pub allocation: AllocationFile,
}

impl OracleFile {
    pub fn from_result(
        compiled: &CompiledInstance,
        result: &hiergame_core::oracle::OracleResult,
    ) -> Result<Self, CliError> {
        let x = compiled
            .dense_from_allocation(&result.allocation)
            .map_err(CliError::from)?;
        Ok(OracleFile {
            fingerprint: format!("{:016x}", result.instance_fingerprint),
            objective_total: result.objective_total,
            controller_values: result.controller_values.clone(),
            allocation: allocation_file(compiled, &x, None, Some(&result.multipliers)),
        })
    }
}

/// Echo of the solver configuration in summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptionsEcho {
    pub tol_price: f64,
    pub max_outer: usize,
    pub rho: f64,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_inner: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle_tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktSummary {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSummary {
    pub objective_total: f64,
    pub controller_values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kkt: Option<KktSummary>,
}

/// Machine-readable result of one `solve` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub instance: Option<String>,
    pub solver: String,
    pub form: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    /// Hex content fingerprint of the instance.
    pub fingerprint: String,
    pub options: OptionsEcho,
    pub converged: bool,
    pub outer_iterations: usize,
    pub final_max_price_delta: f64,
    pub wall_ms_total: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_epsilon_relative: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle: Option<OracleSummary>,
    pub objective_values: Vec<f64>,
    #[serde(flatten)]
    pub allocation: AllocationFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeFit {
    pub controllers: usize,
    pub agents: usize,
    pub slope: f64,
    pub intercept: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_squared: Option<f64>,
}

/// Machine-readable result of one `sweep` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub command: String,
    pub kind: String,
    pub sizes: Vec<(usize, usize)>,
    pub epsilons: Vec<f64>,
    pub seeds: u64,
    pub tol: f64,
    pub fits: Vec<SizeFit>,
}
