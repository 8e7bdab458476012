//! Data model for hierarchical game instances: controllers, agents,
//! per-cell objective and cost terms, coupling constraints, allocations,
//! prices, and the objective-distance accuracy metric.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::SolveError;
use crate::fmath;
use crate::oracle::OracleResult;
pub use crate::scalar::{Bounds, ScalarFn};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ControllerId(String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId(String);

impl ControllerId {
    pub fn new(id: impl Into<String>) -> Self {
        ControllerId(id.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        AgentId(id.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl core::fmt::Display for ControllerId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.0)
    }
}

impl core::fmt::Display for AgentId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One (controller, agent) pair: the unit a scalar resource level lives on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId {
    pub controller: ControllerId,
    pub agent: AgentId,
}

impl CellId {
    pub fn new(controller: impl Into<String>, agent: impl Into<String>) -> Self {
        CellId {
            controller: ControllerId::new(controller),
            agent: AgentId::new(agent),
        }
    }
}

impl core::fmt::Display for CellId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "({}, {})", self.controller, self.agent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Equality,
    LessEqual,
}

/// `sum(a_ij * x_ij) (= | <=) rhs` over a set of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(CellId, f64)>,
    pub rhs: f64,
    pub kind: ConstraintKind,
}

impl LinearConstraint {
    pub fn new(
        terms: Vec<(CellId, f64)>,
        rhs: f64,
        kind: ConstraintKind,
    ) -> Result<Self, SolveError> {
        if !rhs.is_finite() {
            return Err(SolveError::InvalidParameter {
                message: "constraint rhs must be finite".to_string(),
            });
        }
        if !terms.iter().any(|(_, a)| *a != 0.0) || terms.iter().any(|(_, a)| !a.is_finite()) {
            return Err(SolveError::InvalidParameter {
                message: "constraint needs at least one nonzero finite coefficient".to_string(),
            });
        }
        Ok(LinearConstraint { terms, rhs, kind })
    }
}

/// Upper-layer task owner. `task_terms[agent]` is the controller's objective
/// share `f` on that cell; `demand_constraints` couple cells of this
/// controller across agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub id: ControllerId,
    pub task_terms: BTreeMap<AgentId, ScalarFn>,
    pub demand_constraints: Vec<LinearConstraint>,
}

/// Lower-layer resource provider. `cost_terms[controller]` is the agent's
/// cost `g` on that cell; `capacity_constraints` couple cells of this agent
/// across controllers.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: AgentId,
    pub cost_terms: BTreeMap<ControllerId, ScalarFn>,
    pub boxes: BTreeMap<ControllerId, Bounds>,
    pub capacity_constraints: Vec<LinearConstraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameForm {
    /// One controller, independent agents, no coupling constraints.
    Basic,
    /// One controller; constraints couple cells across agents.
    SingleControllerCoupled,
    /// Multiple controllers; constraints on both sides.
    Mlmf,
}

impl GameForm {
    pub fn name(&self) -> &'static str {
        match self {
            GameForm::Basic => "basic",
            GameForm::SingleControllerCoupled => "single-controller-coupled",
            GameForm::Mlmf => "mlmf",
        }
    }
}

/// A complete hierarchical game instance. Cells are the (controller, agent)
/// pairs carrying both a task term and a cost term; validation enforces the
/// per-form invariants before any solver accepts the instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GameInstance {
    pub form: GameForm,
    /// Generator seed, recorded for provenance when applicable.
    pub seed: Option<u64>,
    pub controllers: Vec<Controller>,
    pub agents: Vec<Agent>,
}

/// Resource level per cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Allocation {
    pub x: BTreeMap<CellId, f64>,
}

/// Price per unit resource, per cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriceProfile {
    pub theta: BTreeMap<CellId, f64>,
}

/// Outcome of [`GameInstance::validate`]: violations are hard errors,
/// warnings flag out-of-regime choices (a concave log cost) that solvers
/// may still accept.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Which side owns a coupling constraint (and updates its multiplier).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSide {
    Controller,
    Agent,
}

/// A constraint resolved to dense cell indices.
#[derive(Debug, Clone)]
pub struct CompiledConstraint {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
    pub kind: ConstraintKind,
    pub side: ConstraintSide,
    /// Index of the owning controller or agent in declaration order.
    pub owner: usize,
    /// Stable label for diagnostics, e.g. `c0/demand[0]`.
    pub label: String,
}

impl CompiledConstraint {
    /// Signed residual `sum(a*x) - rhs`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(c, a)| a * x[c]).sum::<f64>() - self.rhs
    }

    /// Violation magnitude: `|residual|` for equalities, `max(0, residual)`
    /// for less-equal constraints.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let r = self.residual(x);
        match self.kind {
            ConstraintKind::Equality => r.abs(),
            ConstraintKind::LessEqual => r.max(0.0),
        }
    }
}

/// One cell of the compiled instance.
#[derive(Debug, Clone)]
pub struct CompiledCell {
    pub id: CellId,
    pub controller_idx: usize,
    pub agent_idx: usize,
    pub f: ScalarFn,
    pub g: ScalarFn,
    pub bounds: Bounds,
}

/// Dense, index-based view of a validated instance: cells in canonical
/// order (controller declaration order, then agent declaration order) and
/// constraints resolved to cell indices. All solvers work on this form.
#[derive(Debug, Clone)]
pub struct CompiledInstance {
    pub form: GameForm,
    pub cells: Vec<CompiledCell>,
    pub constraints: Vec<CompiledConstraint>,
    /// Per cell, the `(constraint index, coefficient)` pairs touching it.
    pub cell_constraints: Vec<Vec<(usize, f64)>>,
    pub n_controllers: usize,
    pub n_agents: usize,
    pub fingerprint: u64,
    cell_lookup: BTreeMap<CellId, usize>,
}

impl CompiledInstance {
    pub fn cell_index(&self, id: &CellId) -> Option<usize> {
        self.cell_lookup.get(id).copied()
    }

    /// Per-controller objective values `F_j = sum_i f_ij(x_ij)` from a dense
    /// allocation, in controller declaration order.
    pub fn controller_values(&self, x: &[f64]) -> Result<Vec<f64>, SolveError> {
        let mut values = alloc::vec![0.0; self.n_controllers];
        for (cell, &xc) in self.cells.iter().zip(x) {
            values[cell.controller_idx] += cell.f.eval(xc)?;
        }
        Ok(values)
    }

    pub fn allocation_from_dense(&self, x: &[f64]) -> Allocation {
        Allocation {
            x: self
                .cells
                .iter()
                .zip(x)
                .map(|(cell, &v)| (cell.id.clone(), v))
                .collect(),
        }
    }

    pub fn prices_from_dense(&self, theta: &[f64]) -> PriceProfile {
        PriceProfile {
            theta: self
                .cells
                .iter()
                .zip(theta)
                .map(|(cell, &v)| (cell.id.clone(), v))
                .collect(),
        }
    }

    /// Dense vector in canonical cell order from an allocation map.
    /// Fails on the first missing cell.
    pub fn dense_from_allocation(&self, alloc: &Allocation) -> Result<Vec<f64>, SolveError> {
        self.cells
            .iter()
            .map(|cell| {
                alloc
                    .x
                    .get(&cell.id)
                    .copied()
                    .ok_or_else(|| SolveError::IncompleteAllocation {
                        cell: cell.id.clone(),
                    })
            })
            .collect()
    }
}

impl GameInstance {
    /// Content fingerprint used to tie oracle results and traces to the
    /// instance they were computed for.
    pub fn fingerprint(&self) -> u64 {
        let mut h = fmath::Fnv1a::new();
        h.write_bytes(self.form.name().as_bytes());
        for controller in &self.controllers {
            h.write_bytes(controller.id.as_str().as_bytes());
            for (agent, f) in &controller.task_terms {
                h.write_bytes(agent.as_str().as_bytes());
                hash_fn(&mut h, f);
            }
            for c in &controller.demand_constraints {
                hash_constraint(&mut h, c);
            }
        }
        for agent in &self.agents {
            h.write_bytes(agent.id.as_str().as_bytes());
            for (controller, g) in &agent.cost_terms {
                h.write_bytes(controller.as_str().as_bytes());
                hash_fn(&mut h, g);
            }
            for (controller, b) in &agent.boxes {
                h.write_bytes(controller.as_str().as_bytes());
                h.write_f64(b.lo());
                h.write_f64(b.hi());
            }
            for c in &agent.capacity_constraints {
                hash_constraint(&mut h, c);
            }
        }
        h.finish()
    }

    /// Checks every structural and per-form invariant, returning the
    /// complete list of violations rather than stopping at the first.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let rep = &mut report;

        let controller_ids: Vec<&ControllerId> = self.controllers.iter().map(|c| &c.id).collect();
        let agent_ids: Vec<&AgentId> = self.agents.iter().map(|a| &a.id).collect();
        check_unique(
            rep,
            controller_ids.iter().map(|c| c.as_str()),
            "controller id",
        );
        check_unique(rep, agent_ids.iter().map(|a| a.as_str()), "agent id");

        // Cell set = pairs with a task term; every such cell needs a cost
        // term and a box, and vice versa.
        for controller in &self.controllers {
            for (agent_id, f) in &controller.task_terms {
                let cell = CellId {
                    controller: controller.id.clone(),
                    agent: agent_id.clone(),
                };
                let Some(agent) = self.agents.iter().find(|a| &a.id == agent_id) else {
                    rep.violations
                        .push(format!("task term {cell} references unknown agent"));
                    continue;
                };
                if let Err(e) = f.validate() {
                    rep.violations.push(format!("task term {cell}: {e}"));
                }
                if !f.is_convex() {
                    rep.violations
                        .push(format!("controller term not convex at cell {cell}"));
                }
                match agent.cost_terms.get(&controller.id) {
                    None => rep
                        .violations
                        .push(format!("cell {cell} has a task term but no cost term")),
                    Some(g) => {
                        if let Err(e) = g.validate() {
                            rep.violations.push(format!("cost term {cell}: {e}"));
                        }
                        if !g.is_convex() {
                            if matches!(g, ScalarFn::LogConcaveCost { .. }) {
                                rep.warnings.push(format!(
                                    "cost term at cell {cell} is a concave log cost: outside the guaranteed-convergence regime"
                                ));
                            } else {
                                rep.violations
                                    .push(format!("agent cost term not convex at cell {cell}"));
                            }
                        }
                    }
                }
                if !agent.boxes.contains_key(&controller.id) {
                    rep.violations.push(format!("cell {cell} has no box"));
                }
            }
        }
        for agent in &self.agents {
            for controller_id in agent.cost_terms.keys() {
                let has_task = self
                    .controllers
                    .iter()
                    .find(|c| &c.id == controller_id)
                    .map(|c| c.task_terms.contains_key(&agent.id));
                match has_task {
                    None => rep.violations.push(format!(
                        "cost term ({controller_id}, {}) references unknown controller",
                        agent.id
                    )),
                    Some(false) => rep.violations.push(format!(
                        "cell ({controller_id}, {}) has a cost term but no task term",
                        agent.id
                    )),
                    Some(true) => {}
                }
            }
        }

        // Constraint scope and span.
        let cell_exists = |cell: &CellId| -> bool {
            self.controllers
                .iter()
                .find(|c| c.id == cell.controller)
                .map(|c| c.task_terms.contains_key(&cell.agent))
                .unwrap_or(false)
        };
        let mut n_demand = 0usize;
        let mut n_capacity = 0usize;
        for controller in &self.controllers {
            for (k, con) in controller.demand_constraints.iter().enumerate() {
                n_demand += 1;
                let label = format!("{}/demand[{k}]", controller.id);
                check_constraint_common(rep, con, &label, &cell_exists);
                if con.terms.iter().any(|(c, _)| c.controller != controller.id) {
                    rep.violations.push(format!(
                        "{label} references cells outside controller {}",
                        controller.id
                    ));
                }
                let mut agents: Vec<&AgentId> = con.terms.iter().map(|(c, _)| &c.agent).collect();
                agents.sort();
                agents.dedup();
                if agents.len() < 2 {
                    rep.violations.push(format!(
                        "{label} must span cells of at least 2 agents to be a coupling constraint"
                    ));
                }
            }
        }
        for agent in &self.agents {
            for (k, con) in agent.capacity_constraints.iter().enumerate() {
                n_capacity += 1;
                let label = format!("{}/capacity[{k}]", agent.id);
                check_constraint_common(rep, con, &label, &cell_exists);
                if con.terms.iter().any(|(c, _)| c.agent != agent.id) {
                    rep.violations
                        .push(format!("{label} references cells outside agent {}", agent.id));
                }
                let mut controllers: Vec<&ControllerId> =
                    con.terms.iter().map(|(c, _)| &c.controller).collect();
                controllers.sort();
                controllers.dedup();
                if controllers.len() < 2 {
                    rep.violations.push(format!(
                        "{label} must span cells of at least 2 controllers to be a coupling constraint"
                    ));
                }
            }
        }

        // Per-form invariants.
        match self.form {
            GameForm::Basic => {
                if self.controllers.len() != 1 {
                    rep.violations
                        .push("basic form requires exactly one controller".to_string());
                }
                if n_demand + n_capacity > 0 {
                    rep.violations
                        .push("basic form admits no coupling constraints".to_string());
                }
            }
            GameForm::SingleControllerCoupled => {
                if self.controllers.len() != 1 {
                    rep.violations.push(
                        "single-controller-coupled form requires exactly one controller"
                            .to_string(),
                    );
                }
                if n_capacity > 0 {
                    rep.violations.push(
                        "single-controller-coupled form admits only agent-coupling (controller-owned) constraints"
                            .to_string(),
                    );
                }
            }
            GameForm::Mlmf => {
                if self.controllers.is_empty() {
                    rep.violations
                        .push("mlmf form requires at least one controller".to_string());
                }
            }
        }

        report
    }

    /// Validates and lowers the instance to the dense indexed form.
    pub fn compile(&self) -> Result<CompiledInstance, SolveError> {
        let report = self.validate();
        if !report.is_ok() {
            return Err(SolveError::InvalidInstance {
                violations: report.violations,
            });
        }

        let agent_positions: BTreeMap<&AgentId, usize> = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| (&a.id, i))
            .collect();

        let mut cells = Vec::new();
        for (controller_idx, controller) in self.controllers.iter().enumerate() {
            // Canonical order: controller declaration order, then agent
            // declaration order (not lexicographic ids).
            let mut terms: Vec<(&AgentId, &ScalarFn)> = controller.task_terms.iter().collect();
            terms.sort_by_key(|(agent_id, _)| agent_positions[*agent_id]);
            for (agent_id, f) in terms {
                let agent_idx = agent_positions[agent_id];
                let agent = &self.agents[agent_idx];
                cells.push(CompiledCell {
                    id: CellId {
                        controller: controller.id.clone(),
                        agent: agent_id.clone(),
                    },
                    controller_idx,
                    agent_idx,
                    f: f.clone(),
                    g: agent.cost_terms[&controller.id].clone(),
                    bounds: agent.boxes[&controller.id],
                });
            }
        }
        let cell_lookup: BTreeMap<CellId, usize> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect();

        let mut constraints = Vec::new();
        for (owner, controller) in self.controllers.iter().enumerate() {
            for (k, con) in controller.demand_constraints.iter().enumerate() {
                constraints.push(compile_constraint(
                    con,
                    &cell_lookup,
                    ConstraintSide::Controller,
                    owner,
                    format!("{}/demand[{k}]", controller.id),
                )?);
            }
        }
        for (owner, agent) in self.agents.iter().enumerate() {
            for (k, con) in agent.capacity_constraints.iter().enumerate() {
                constraints.push(compile_constraint(
                    con,
                    &cell_lookup,
                    ConstraintSide::Agent,
                    owner,
                    format!("{}/capacity[{k}]", agent.id),
                )?);
            }
        }

        let mut cell_constraints = alloc::vec![Vec::new(); cells.len()];
        for (k, con) in constraints.iter().enumerate() {
            for &(c, a) in &con.terms {
                cell_constraints[c].push((k, a));
            }
        }

        Ok(CompiledInstance {
            form: self.form,
            cells,
            constraints,
            cell_constraints,
            n_controllers: self.controllers.len(),
            n_agents: self.agents.len(),
            fingerprint: self.fingerprint(),
            cell_lookup,
        })
    }
}

fn hash_fn(h: &mut fmath::Fnv1a, f: &ScalarFn) {
    match f {
        ScalarFn::Quadratic { a, b, c } => {
            h.write_bytes(b"quadratic");
            h.write_f64(*a);
            h.write_f64(*b);
            h.write_f64(*c);
        }
        ScalarFn::Linear { s, c } => {
            h.write_bytes(b"linear");
            h.write_f64(*s);
            h.write_f64(*c);
        }
        ScalarFn::InvShannon { n0, w } => {
            h.write_bytes(b"inv_shannon");
            h.write_f64(*n0);
            h.write_f64(*w);
        }
        ScalarFn::LogConcaveCost { alpha, beta } => {
            h.write_bytes(b"log_concave_cost");
            h.write_f64(*alpha);
            h.write_f64(*beta);
        }
        ScalarFn::PowerLaw { a, p } => {
            h.write_bytes(b"power_law");
            h.write_f64(*a);
            h.write_f64(*p);
        }
        ScalarFn::Sum(terms) => {
            h.write_bytes(b"sum");
            h.write_u64(terms.len() as u64);
            for t in terms {
                hash_fn(h, t);
            }
        }
    }
}

fn hash_constraint(h: &mut fmath::Fnv1a, con: &LinearConstraint) {
    h.write_bytes(match con.kind {
        ConstraintKind::Equality => b"eq",
        ConstraintKind::LessEqual => b"le",
    });
    h.write_f64(con.rhs);
    h.write_u64(con.terms.len() as u64);
    for (cell, a) in &con.terms {
        h.write_bytes(cell.controller.as_str().as_bytes());
        h.write_bytes(cell.agent.as_str().as_bytes());
        h.write_f64(*a);
    }
}

fn compile_constraint(
    con: &LinearConstraint,
    lookup: &BTreeMap<CellId, usize>,
    side: ConstraintSide,
    owner: usize,
    label: String,
) -> Result<CompiledConstraint, SolveError> {
    let terms = con
        .terms
        .iter()
        .map(|(cell, a)| {
            lookup
                .get(cell)
                .map(|&i| (i, *a))
                .ok_or_else(|| SolveError::IncompleteAllocation { cell: cell.clone() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CompiledConstraint {
        terms,
        rhs: con.rhs,
        kind: con.kind,
        side,
        owner,
        label,
    })
}

fn check_unique<'a>(
    rep: &mut ValidationReport,
    ids: impl Iterator<Item = &'a str>,
    what: &str,
) {
    let mut seen: Vec<&str> = ids.collect();
    seen.sort_unstable();
    for pair in seen.windows(2) {
        if pair[0] == pair[1] {
            rep.violations.push(format!("duplicate {what} {}", pair[0]));
        }
    }
}

fn check_constraint_common(
    rep: &mut ValidationReport,
    con: &LinearConstraint,
    label: &str,
    cell_exists: &dyn Fn(&CellId) -> bool,
) {
    if !con.rhs.is_finite() {
        rep.violations.push(format!("{label} has non-finite rhs"));
    }
    if !con.terms.iter().any(|(_, a)| *a != 0.0) {
        rep.violations
            .push(format!("{label} has no nonzero coefficient"));
    }
    for (cell, a) in &con.terms {
        if !a.is_finite() {
            rep.violations
                .push(format!("{label} has non-finite coefficient at {cell}"));
        }
        if !cell_exists(cell) {
            rep.violations.push(format!(
                "{label} references cell {cell} lacking a task or cost term"
            ));
        }
    }
}

/// Per-controller objective values `F_j`, in controller declaration order.
pub fn objective_values(inst: &GameInstance, alloc: &Allocation) -> Result<Vec<f64>, SolveError> {
    let mut values = Vec::with_capacity(inst.controllers.len());
    for controller in &inst.controllers {
        let mut total = 0.0;
        for (agent_id, f) in &controller.task_terms {
            let cell = CellId {
                controller: controller.id.clone(),
                agent: agent_id.clone(),
            };
            let x = alloc
                .x
                .get(&cell)
                .copied()
                .ok_or(SolveError::IncompleteAllocation { cell })?;
            total += f.eval(x)?;
        }
        values.push(total);
    }
    Ok(values)
}

/// Accuracy metric: Euclidean distance between the achieved and optimal
/// controller objective vectors.
pub fn epsilon(
    inst: &GameInstance,
    alloc: &Allocation,
    reference: &OracleResult,
) -> Result<f64, SolveError> {
    if reference.instance_fingerprint != inst.fingerprint() {
        return Err(SolveError::InstanceMismatch);
    }
    let achieved = objective_values(inst, alloc)?;
    if achieved.len() != reference.controller_values.len() {
        return Err(SolveError::InstanceMismatch);
    }
    let diffs: Vec<f64> = achieved
        .iter()
        .zip(&reference.controller_values)
        .map(|(a, r)| a - r)
        .collect();
    Ok(fmath::norm2(&diffs))
}

/// Agent `i`'s utility: payments minus costs over its cells,
/// `sum_j (theta_ij * x_ij - g_ij(x_ij))`.
pub fn agent_utility(
    inst: &GameInstance,
    alloc: &Allocation,
    prices: &PriceProfile,
    agent: &AgentId,
) -> Result<f64, SolveError> {
    let agent = inst
        .agents
        .iter()
        .find(|a| &a.id == agent)
        .ok_or_else(|| SolveError::InvalidParameter {
            message: format!("unknown agent {agent}"),
        })?;
    let mut total = 0.0;
    for (controller_id, g) in &agent.cost_terms {
        let cell = CellId {
            controller: controller_id.clone(),
            agent: agent.id.clone(),
        };
        let x = alloc
            .x
            .get(&cell)
            .copied()
            .ok_or_else(|| SolveError::IncompleteAllocation { cell: cell.clone() })?;
        let theta = prices
            .theta
            .get(&cell)
            .copied()
            .ok_or(SolveError::IncompleteAllocation { cell })?;
        total += theta * x - g.eval(x)?;
    }
    Ok(total)
}
