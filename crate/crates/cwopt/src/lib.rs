//! Construction-waste hauling optimization.
//!
//! Trucks move waste between production sites, backfill sites, and processing
//! facilities on a time-space network. The carrier schedules trucks to
//! maximize profit (a minimum-cost integer flow); the government designs
//! per-facility, per-fleet treatment fees to cut pollution at the lowest
//! subsidy spend. The fee design problem is solved with a multi-objective
//! particle swarm whose inner oracle is an exact branch-and-bound MILP solver.
//!
//! Module map:
//! - [`scenario`]: instance definition, validation, file I/O, synthetic generator
//! - [`network`]: time-space support graph with classified arcs
//! - [`emissions`]: fuel-rate and pollution-index accounting
//! - [`model`]: MILP assembly for the carrier problem and its variants
//! - [`solver`]: bounded-variable simplex plus branch and bound
//! - [`bilevel`]: swarm search over fee schedules with Pareto archive
//! - [`metrics`]: pollution-reduction, gap, and subsidy-effectiveness figures
//! - [`cli`]: command-line front end and run artifacts

pub mod bilevel;
pub mod cli;
pub mod emissions;
pub mod metrics;
pub mod model;
pub mod network;
pub mod scenario;
pub mod solver;

pub(crate) mod util;
