//! Solvers for hierarchical incentive games between upper-layer controllers
//! and lower-layer resource agents.
//!
//! A controller offloads a decomposable task to agents and steers them with
//! per-unit prices; each agent best-responds to an incentive function that
//! blends the controller's objective with its own payment-minus-cost utility.
//! Prices are updated to the agents' marginal costs, which drives the
//! negotiation to a Stackelberg equilibrium. When agents (or several
//! controllers) are coupled by linear resource constraints, a Jacobi-proximal
//! ADMM inner loop restores feasibility at fixed prices before each price
//! update.
//!
//! The crate is organized around three solver entry points plus the ground
//! truth they are judged against:
//!
//! - [`basic::solve_basic`]: one controller, independent agents.
//! - [`coupled::solve_single_controller_coupled`]: one controller, agents
//!   coupled by linear constraints (ADMM inner loop).
//! - [`mlmf::solve_mlmf`]: multiple controllers and agents with coupling
//!   constraints on both sides.
//! - [`oracle::centralized_optimum`]: an independent constrained solver for
//!   the social optimum, with a KKT verifier.
//!
//! [`scenario::gen_scenario`] produces seeded, reproducible instances styled
//! after crowd sensing, caching, vehicular relaying, and fog computing.
//!
//! The crate is `no_std`-compatible (allocator required); disable the
//! default `std` feature for embedded or sandboxed builds.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod fmath;

pub mod admm;
pub mod basic;
pub mod coupled;
pub mod error;
pub mod mlmf;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod scenario;
pub mod step;

pub use error::{FnError, SolveError};
pub use model::{
    agent_utility, epsilon, objective_values, Agent, AgentId, Allocation, CellId,
    CompiledInstance, ConstraintKind, ConstraintSide, Controller, ControllerId, GameForm,
    GameInstance, LinearConstraint, PriceProfile, ValidationReport,
};
pub use scalar::{argmin_shifted, Bounds, ScalarFn};
pub use step::{OuterSolver, OuterStep};
