//! Branch and bound over the LP relaxation.
//!
//! Nodes plunge depth-first along the rounding direction of the branching
//! variable, re-using the live simplex session across bound changes so a
//! dive costs a handful of pivots per level; backtracking restores a stored
//! basis. Node selection outside the dive is best-bound. Branching picks
//! the most fractional flow with ties broken by objective weight. Strictly
//! worse nodes are pruned; nodes that tie the incumbent stay alive (within
//! a budget) so alternative optima land in a pool, from which one schedule
//! is drawn at random per the solve seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{FlowSolution, MilpInstance, SolveStatus};
use crate::solver::simplex::{LpOutcome, LpProblem, LpSession};
use crate::util::derive_seed;

const INT_TOL: f64 = 1e-6;
const POOL_CAP: usize = 32;
/// Nodes that merely tie the incumbent stop being explored past this count;
/// enough to surface alternative optima without combing whole plateaus.
const TIE_NODE_BUDGET: u64 = 256;

#[derive(Debug, Clone)]
pub struct SolveConfig {
    /// Relative optimality gap at which the search stops. Zero means prove
    /// optimality (and keep collecting tied optima).
    pub gap_target: f64,
    pub time_limit_secs: f64,
    pub seed: u64,
    pub node_limit: Option<u64>,
    /// Progress log destination (`time,incumbent,bound,gap,nodes` lines).
    pub progress_path: Option<PathBuf>,
    /// Cadence of progress lines, in nodes.
    pub log_every_nodes: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            gap_target: 0.0,
            time_limit_secs: 600.0,
            seed: 0,
            node_limit: None,
            progress_path: None,
            log_every_nodes: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveStats {
    pub best_bound: f64,
    pub incumbent: Option<f64>,
    /// (incumbent - best_bound) / max(|incumbent|, 1).
    pub gap: f64,
    pub nodes_explored: u64,
    pub wall_time_secs: f64,
    pub lp_iterations: u64,
    /// Alternative optimal schedules found alongside the returned one.
    pub tie_candidates: usize,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("objective is unbounded; the instance is malformed")]
    Unbounded,
    #[error("linear relaxation infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure in the simplex core: {0}")]
    Numerical(String),
    #[error("cannot write progress log: {0}")]
    Progress(#[from] std::io::Error),
}

struct Node {
    bound: f64,
    seq: u64,
    lower: Arc<[f64]>,
    upper: Arc<[f64]>,
    basis: Option<Arc<[u8]>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for best-bound-first, FIFO ties.
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Solve the LP relaxation at the instance's own bounds.
pub fn lp_relax(instance: &MilpInstance) -> Result<(Vec<f64>, f64), SolveError> {
    let prob = LpProblem::from_instance(instance);
    let (lower, upper) = root_bounds(instance);
    match prob.solve_with_bounds(&lower, &upper, 0) {
        LpOutcome::Optimal(s) => Ok((s.x, s.objective)),
        LpOutcome::Infeasible { row } => Err(SolveError::Infeasible(
            instance.rows[row].kind.describe(),
        )),
        LpOutcome::Unbounded => Err(SolveError::Unbounded),
        LpOutcome::Numerical(e) => Err(SolveError::Numerical(e)),
    }
}

/// Uniform choice among equivalent incumbents, deterministic in the seed.
pub fn tie_break(candidates: &[FlowSolution], seed: u64) -> FlowSolution {
    assert!(!candidates.is_empty(), "tie_break needs at least one candidate");
    debug_assert!(candidates.windows(2).all(|w| {
        let scale = w[0].objective_value.abs().max(1.0);
        (w[0].objective_value - w[1].objective_value).abs() <= 1e-9 * scale
    }));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(0..candidates.len());
    candidates[k].clone()
}

fn root_bounds(instance: &MilpInstance) -> (Vec<f64>, Vec<f64>) {
    let lower = vec![0.0; instance.var_count()];
    let upper = instance.vars.iter().map(|v| v.upper as f64).collect();
    (lower, upper)
}

/// Exact branch-and-bound solve. Returns the incumbent schedule (chosen at
/// random among tied optima) plus search statistics; infeasibility comes
/// back as a status with a certificate, not an error.
pub fn solve(
    instance: &MilpInstance,
    config: &SolveConfig,
) -> Result<(FlowSolution, SolveStats), SolveError> {
    let start = Instant::now();
    let prob = LpProblem::from_instance(instance);
    let (root_lower, root_upper) = root_bounds(instance);
    let lp_seed = derive_seed(config.seed, 0x4c50, 0, 0);
    let mut session = LpSession::new(&prob, &root_lower, &root_upper, lp_seed);

    let mut progress: Option<std::io::BufWriter<std::fs::File>> = match &config.progress_path {
        Some(path) => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(w, "time,incumbent,bound,gap,nodes")?;
            Some(w)
        }
        None => None,
    };

    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut seq: u64 = 0;
    let mut current = Some(Node {
        bound: f64::NEG_INFINITY,
        seq,
        lower: root_lower.clone().into(),
        upper: root_upper.clone().into(),
        basis: None,
    });

    let mut incumbent: Option<f64> = None;
    let mut pool: Vec<Vec<u32>> = Vec::new();
    let mut nodes: u64 = 0;
    let mut tie_nodes: u64 = 0;
    let mut status = SolveStatus::OptimalWithinGap;

    let tie_eps = |best: f64| 1e-9 * best.abs().max(1.0);
    let gap_of = |inc: Option<f64>, bb: f64| -> f64 {
        match inc {
            None => f64::INFINITY,
            Some(best) => ((best - bb) / best.abs().max(1.0)).max(0.0),
        }
    };

    'search: loop {
        let (node, from_dive) = match current.take() {
            Some(n) => (n, true),
            None => match heap.pop() {
                Some(n) => (n, false),
                None => break,
            },
        };

        if let Some(best) = incumbent {
            let eps = tie_eps(best);
            if node.bound > best + eps {
                if !from_dive {
                    // Best-bound order: everything left is at least as bad.
                    heap.clear();
                    break;
                }
                continue;
            }
            if node.bound >= best - eps {
                tie_nodes += 1;
                if pool.len() >= POOL_CAP || tie_nodes > TIE_NODE_BUDGET || config.gap_target > 0.0
                {
                    continue;
                }
            }
        }
        if start.elapsed().as_secs_f64() > config.time_limit_secs {
            status = SolveStatus::TimeLimit;
            break;
        }
        if let Some(limit) = config.node_limit {
            if nodes >= limit {
                status = SolveStatus::TimeLimit;
                break;
            }
        }

        nodes += 1;
        if !from_dive {
            // Backtrack: adopt the node's bounds and stored basis. A failed
            // restore leaves the session unfactorized and solve() falls
            // back to a cold start by itself.
            session.set_structural_bounds(&node.lower, &node.upper);
            if let Some(basis) = &node.basis {
                let _ = session.restore_basis(basis);
            }
        }
        let mut outcome = session.solve();
        if matches!(outcome, LpOutcome::Numerical(_)) {
            // Retry cold once before giving up on the node.
            session.reset_cold();
            outcome = session.solve();
        }
        let sol = match outcome {
            LpOutcome::Optimal(s) => s,
            LpOutcome::Infeasible { row } => {
                if nodes == 1 {
                    let certificate = instance.rows[row].kind.describe();
                    return Ok(finish_infeasible(instance, certificate, start, nodes, 0));
                }

                continue;
            }
            LpOutcome::Unbounded => return Err(SolveError::Unbounded),
            LpOutcome::Numerical(e) => return Err(SolveError::Numerical(e)),
        };

        if let Some(best) = incumbent {
            if sol.objective > best + tie_eps(best) {

                continue;
            }
        }

        match pick_branch_var(instance, &sol.x) {
            None => {

                // Integral vertex: round and verify exactly before accepting.
                let flows: Vec<u32> = sol.x.iter().map(|&v| v.round().max(0.0) as u32).collect();
                if instance.validate_flows(&flows).is_err() {
                    // Numerically integral but not exactly feasible: force a
                    // decision on the least-integral coordinate.
                    if let Some(j) = least_integral(&sol.x) {
                        let basis = Arc::<[u8]>::from(session.basis_snapshot());
                        push_children(
                            &mut heap,
                            &mut seq,
                            &node,
                            j,
                            sol.x[j],
                            sol.objective,
                            Some(basis),
                        );
                    }
                    continue;
                }
                let obj: f64 = flows
                    .iter()
                    .zip(instance.objective.iter())
                    .map(|(&f, &c)| f as f64 * c)
                    .sum();
                match incumbent {
                    None => {
                        incumbent = Some(obj);
                        pool.clear();
                        pool.push(flows);
                    }
                    Some(best) if obj < best - tie_eps(best) => {
                        incumbent = Some(obj);
                        pool.clear();
                        pool.push(flows);
                    }
                    Some(best) if (obj - best).abs() <= tie_eps(best) => {
                        if pool.len() < POOL_CAP && !pool.iter().any(|p| *p == flows) {
                            pool.push(flows);
                        }
                    }
                    _ => {}
                }
                if let Some(w) = progress.as_mut() {
                    let bb = heap.peek().map(|n| n.bound).unwrap_or(sol.objective);
                    log_line(w, start, incumbent, bb, gap_of(incumbent, bb), nodes)?;
                }
            }
            Some(j) => {
                // Plunge toward the rounding of the branching variable and
                // park the other side in the heap with the parent basis.
                let frac = sol.x[j] - sol.x[j].floor();
                let basis = Arc::<[u8]>::from(session.basis_snapshot());
                let (mut lower_child, mut upper_child) =
                    (node.lower.to_vec(), node.upper.to_vec());
                let (other_lower, other_upper);
                if frac >= 0.5 {
                    lower_child[j] = sol.x[j].ceil();
                    let mut u = node.upper.to_vec();
                    u[j] = sol.x[j].floor();
                    other_lower = node.lower.clone();
                    other_upper = Arc::<[f64]>::from(u);
                } else {
                    upper_child[j] = sol.x[j].floor();
                    let mut l = node.lower.to_vec();
                    l[j] = sol.x[j].ceil();
                    other_lower = Arc::<[f64]>::from(l);
                    other_upper = node.upper.clone();
                }
                seq += 1;
                heap.push(Node {
                    bound: sol.objective,
                    seq,
                    lower: other_lower,
                    upper: other_upper,
                    basis: Some(basis),
                });
                seq += 1;
                let child = Node {
                    bound: sol.objective,
                    seq,
                    lower: lower_child.into(),
                    upper: upper_child.into(),
                    basis: None,
                };
                // Keep the live session: just narrow the bounds in place.
                session.set_structural_bounds(&child.lower, &child.upper);
                current = Some(child);

            }
        }

        if let Some(w) = progress.as_mut() {
            if config.log_every_nodes > 0 && nodes % config.log_every_nodes == 0 {
                let bb = heap.peek().map(|n| n.bound).unwrap_or(sol.objective);
                log_line(w, start, incumbent, bb, gap_of(incumbent, bb), nodes)?;
            }
        }

        if config.gap_target > 0.0 {
            if let Some(best) = incumbent {
                let open_bound = match (&current, heap.peek()) {
                    (Some(c), Some(h)) => c.bound.min(h.bound),
                    (Some(c), None) => c.bound,
                    (None, Some(h)) => h.bound,
                    (None, None) => best,
                };
                if gap_of(incumbent, open_bound.min(best)) <= config.gap_target {
                    break 'search;
                }
            }
        }
    }

    let wall = start.elapsed().as_secs_f64();
    match incumbent {
        None => {
            if status == SolveStatus::TimeLimit {
                let sol = FlowSolution {
                    vars: instance.vars.clone(),
                    flows: vec![0; instance.var_count()],
                    objective_value: f64::NAN,
                    solver_gap: f64::INFINITY,
                    status: SolveStatus::TimeLimit,
                    infeasibility: None,
                };
                let stats = SolveStats {
                    best_bound: f64::NEG_INFINITY,
                    incumbent: None,
                    gap: f64::INFINITY,
                    nodes_explored: nodes,
                    wall_time_secs: wall,
                    lp_iterations: session.total_iterations(),
                    tie_candidates: 0,
                };
                return Ok((sol, stats));
            }
            // The relaxation was feasible but no integer point exists.
            Ok(finish_infeasible(
                instance,
                "no integer-feasible schedule within the supply and demand windows".into(),
                start,
                nodes,
                0,
            ))
        }
        Some(best) => {
            let open_bound = match (&current, heap.peek()) {
                (Some(c), Some(h)) => c.bound.min(h.bound),
                (Some(c), None) => c.bound,
                (None, Some(h)) => h.bound,
                (None, None) => best,
            };
            let bb = open_bound.min(best);
            let gap = gap_of(incumbent, bb);
            let candidates: Vec<FlowSolution> = pool
                .iter()
                .map(|flows| FlowSolution {
                    vars: instance.vars.clone(),
                    flows: flows.clone(),
                    objective_value: best,
                    solver_gap: gap,
                    status,
                    infeasibility: None,
                })
                .collect();
            let chosen = tie_break(&candidates, derive_seed(config.seed, 0x7469, 0, 0));
            let stats = SolveStats {
                best_bound: bb,
                incumbent: Some(best),
                gap,
                nodes_explored: nodes,
                wall_time_secs: wall,
                lp_iterations: session.total_iterations(),
                tie_candidates: pool.len(),
            };
            if let Some(w) = progress.as_mut() {
                log_line(w, start, incumbent, bb, gap, nodes)?;
                w.flush()?;
            }
            Ok((chosen, stats))
        }
    }
}

fn finish_infeasible(
    instance: &MilpInstance,
    certificate: String,
    start: Instant,
    nodes: u64,
    lp_iterations: u64,
) -> (FlowSolution, SolveStats) {
    let sol = FlowSolution {
        vars: instance.vars.clone(),
        flows: vec![0; instance.var_count()],
        objective_value: f64::NAN,
        solver_gap: f64::INFINITY,
        status: SolveStatus::Infeasible,
        infeasibility: Some(certificate),
    };
    let stats = SolveStats {
        best_bound: f64::INFINITY,
        incumbent: None,
        gap: f64::INFINITY,
        nodes_explored: nodes,
        wall_time_secs: start.elapsed().as_secs_f64(),
        lp_iterations,
        tie_candidates: 0,
    };
    (sol, stats)
}

/// Most fractional variable (closest to half-integral), ties by objective
/// magnitude, then index. `None` when everything is integral to tolerance.
fn pick_branch_var(instance: &MilpInstance, x: &[f64]) -> Option<usize> {
    let mut best: Option<(f64, f64, usize)> = None;
    for (j, &v) in x.iter().enumerate() {
        let frac = v - v.floor();
        let dist = frac.min(1.0 - frac);
        if dist <= INT_TOL {
            continue;
        }
        let weight = instance.objective[j].abs();
        let better = match best {
            None => true,
            Some((bd, bw, _)) => dist > bd + 1e-9 || ((dist - bd).abs() <= 1e-9 && weight > bw),
        };
        if better {
            best = Some((dist, weight, j));
        }
    }
    best.map(|(_, _, j)| j)
}

fn least_integral(x: &[f64]) -> Option<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, &v)| {
            let frac = v - v.floor();
            frac.min(1.0 - frac) > 1e-12
        })
        .max_by(|(_, a), (_, b)| {
            let fa = *a - a.floor();
            let fb = *b - b.floor();
            fa.min(1.0 - fa).total_cmp(&fb.min(1.0 - fb))
        })
        .map(|(j, _)| j)
}

#[allow(clippy::too_many_arguments)]
fn push_children(
    heap: &mut BinaryHeap<Node>,
    seq: &mut u64,
    node: &Node,
    j: usize,
    xj: f64,
    bound: f64,
    basis: Option<Arc<[u8]>>,
) {
    let mut down_upper = node.upper.to_vec();
    down_upper[j] = xj.floor();
    if down_upper[j] >= node.lower[j] {
        *seq += 1;
        heap.push(Node {
            bound,
            seq: *seq,
            lower: node.lower.clone(),
            upper: down_upper.into(),
            basis: basis.clone(),
        });
    }
    let mut up_lower = node.lower.to_vec();
    up_lower[j] = xj.ceil();
    if up_lower[j] <= node.upper[j] {
        *seq += 1;
        heap.push(Node {
            bound,
            seq: *seq,
            lower: up_lower.into(),
            upper: node.upper.clone(),
            basis,
        });
    }
}

fn log_line(
    w: &mut impl Write,
    start: Instant,
    incumbent: Option<f64>,
    bound: f64,
    gap: f64,
    nodes: u64,
) -> std::io::Result<()> {
    writeln!(
        w,
        "{:.3},{},{:.6},{:.6},{}",
        start.elapsed().as_secs_f64(),
        incumbent.map(|v| format!("{v:.6}")).unwrap_or_default(),
        bound,
        gap,
        nodes
    )
}
