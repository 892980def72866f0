//! Exact MILP solving: LP relaxation via bounded-variable simplex, then
//! branch and bound with gap tracking, limits, and randomized tie-breaking
//! among alternative optima.

pub mod bb;
pub mod simplex;

pub use bb::{lp_relax, solve, tie_break, SolveConfig, SolveError, SolveStats};
pub use simplex::{LpOutcome, LpProblem, LpSession, LpSolution};
