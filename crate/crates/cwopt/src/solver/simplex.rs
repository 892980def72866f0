//! Bounded-variable primal simplex with an explicit dense basis inverse.
//!
//! The solver is a reusable session: build it once per model, then re-solve
//! under changing variable bounds, which is exactly what branch and bound
//! does. Feasibility is restored by a composite phase one (piecewise-linear
//! infeasibility costs on out-of-bounds basics) rather than artificial
//! columns, so a warm basis from a parent node is a valid starting point
//! after any bound change. Entering-variable ties break on a seeded random
//! priority so alternative optimal vertices are sampled across seeds, with
//! a Bland-order fallback when the iteration stalls.

use crate::model::{MilpInstance, Sense};

const DUAL_TOL: f64 = 1e-7;
const PRIMAL_TOL: f64 = 1e-7;
const RATIO_TOL: f64 = 1e-9;
/// Direction entries smaller than this cannot block the ratio test.
const BLOCK_MIN: f64 = 1e-9;
/// Pivots smaller than this trigger a refactor-and-retry; smaller than
/// `PIVOT_HARD_MIN` even on a fresh inverse is a hard failure.
const PIVOT_SOFT_MIN: f64 = 1e-7;
const PIVOT_HARD_MIN: f64 = 1e-11;
const REFRESH_EVERY: u64 = 400;
const STALL_LIMIT: u64 = 400;
const FEAS_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u64,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    /// No feasible point; the row index names a constraint still violated
    /// when the feasibility phase gave up.
    Infeasible { row: usize },
    Unbounded,
    Numerical(String),
}

/// Constraint matrix and objective in column form, built once per model and
/// re-solved under many bound vectors.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub ncols: usize,
    pub obj: Vec<f64>,
    senses: Vec<Sense>,
    rhs: Vec<f64>,
    cols: Vec<Vec<(usize, f64)>>,
}

impl LpProblem {
    pub fn new(
        ncols: usize,
        obj: Vec<f64>,
        rows: impl IntoIterator<Item = (Vec<(usize, f64)>, Sense, f64)>,
    ) -> LpProblem {
        let mut senses = Vec::new();
        let mut rhs = Vec::new();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncols];
        for (terms, sense, b) in rows {
            let i = senses.len();
            for (j, c) in terms {
                if c != 0.0 {
                    cols[j].push((i, c));
                }
            }
            senses.push(sense);
            rhs.push(b);
        }
        LpProblem {
            ncols,
            obj,
            senses,
            rhs,
            cols,
        }
    }

    pub fn from_instance(instance: &MilpInstance) -> LpProblem {
        LpProblem::new(
            instance.var_count(),
            instance.objective.clone(),
            instance
                .rows
                .iter()
                .map(|r| (r.terms.clone(), r.sense, r.rhs)),
        )
    }

    pub fn row_count(&self) -> usize {
        self.senses.len()
    }

    fn slack_bounds(&self, i: usize) -> (f64, f64) {
        match self.senses[i] {
            Sense::Le => (0.0, f64::INFINITY),
            Sense::Ge => (f64::NEG_INFINITY, 0.0),
            Sense::Eq => (0.0, 0.0),
        }
    }

    /// One-shot solve from a cold basis. Numerical trouble retries with a
    /// reshuffled pivot order before giving up.
    pub fn solve_with_bounds(&self, lower: &[f64], upper: &[f64], seed: u64) -> LpOutcome {
        let mut last = LpOutcome::Numerical("not attempted".into());
        for attempt in 0..3u64 {
            let attempt_seed = seed.wrapping_add(attempt.wrapping_mul(0x9e3779b97f4a7c15));
            let mut session = LpSession::new(self, lower, upper, attempt_seed);
            match session.solve() {
                LpOutcome::Numerical(e) => last = LpOutcome::Numerical(e),
                done => return done,
            }
        }
        last
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

/// A solver instance that keeps its basis across bound changes.
pub struct LpSession<'a> {
    prob: &'a LpProblem,
    m: usize,
    n_struct: usize,
    lb: Vec<f64>,
    ub: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    prio: Vec<u64>,
    iterations: u64,
    stall: u64,
    bland: bool,
    last_refresh: u64,
    factorized: bool,
    /// Refactorization count, surfaced for performance diagnostics.
    pub refactor_count: u64,
    /// Iterations spent by phase in the most recent `solve` call.
    pub last_phase1_iters: u64,
    pub last_phase2_iters: u64,
}

impl<'a> LpSession<'a> {
    pub fn new(prob: &'a LpProblem, lower: &[f64], upper: &[f64], seed: u64) -> LpSession<'a> {
        let m = prob.row_count();
        let n_struct = prob.ncols;
        let mut lb = lower.to_vec();
        let mut ub = upper.to_vec();
        for i in 0..m {
            let (l, u) = prob.slack_bounds(i);
            lb.push(l);
            ub.push(u);
        }
        let mut prio = Vec::with_capacity(n_struct + m);
        let mut s = seed ^ 0x9e3779b97f4a7c15;
        for _ in 0..n_struct + m {
            s = crate::util::splitmix64(s);
            prio.push(s);
        }
        let mut session = LpSession {
            prob,
            m,
            n_struct,
            lb,
            ub,
            state: Vec::new(),
            basis: Vec::new(),
            binv: Vec::new(),
            xb: Vec::new(),
            prio,
            iterations: 0,
            stall: 0,
            bland: false,
            last_refresh: 0,

            factorized: false,
            refactor_count: 0,
            last_phase1_iters: 0,
            last_phase2_iters: 0,
        };
        session.reset_cold();
        session
    }

    /// All-slack basis, structurals at a finite bound.
    pub fn reset_cold(&mut self) {
        self.state = (0..self.n_struct + self.m)
            .map(|j| {
                if j >= self.n_struct {
                    VarState::Basic
                } else if self.lb[j].is_finite() {
                    VarState::AtLower
                } else {
                    VarState::AtUpper
                }
            })
            .collect();
        self.basis = (0..self.m).map(|i| self.n_struct + i).collect();
        self.binv = identity(self.m);
        self.xb = vec![0.0; self.m];
        self.factorized = true;
        self.recompute_xb();
    }

    /// Replace the structural bounds (slack bounds never change).
    pub fn set_structural_bounds(&mut self, lower: &[f64], upper: &[f64]) {
        self.lb[..self.n_struct].copy_from_slice(lower);
        self.ub[..self.n_struct].copy_from_slice(upper);
        if self.factorized {
            self.recompute_xb();
        }
    }

    /// Snapshot of the basis as one byte per column (structurals + slacks).
    pub fn basis_snapshot(&self) -> Vec<u8> {
        self.state
            .iter()
            .map(|s| match s {
                VarState::Basic => 0,
                VarState::AtLower => 1,
                VarState::AtUpper => 2,
            })
            .collect()
    }

    /// Adopt a basis snapshot and refactorize. Falls back to an error when
    /// the snapshot does not contain exactly one basic column per row or
    /// the basis matrix is singular.
    pub fn restore_basis(&mut self, snapshot: &[u8]) -> Result<(), String> {
        if snapshot.len() != self.n_struct + self.m {
            return Err("basis snapshot has wrong length".into());
        }
        let mut basis = Vec::with_capacity(self.m);
        let mut state = Vec::with_capacity(snapshot.len());
        for (j, &code) in snapshot.iter().enumerate() {
            state.push(match code {
                0 => {
                    basis.push(j);
                    VarState::Basic
                }
                1 => VarState::AtLower,
                2 => VarState::AtUpper,
                other => return Err(format!("bad basis code {other}")),
            });
        }
        if basis.len() != self.m {
            return Err(format!(
                "snapshot has {} basic columns for {} rows",
                basis.len(),
                self.m
            ));
        }
        let old_state = std::mem::replace(&mut self.state, state);
        let old_basis = std::mem::replace(&mut self.basis, basis);
        match self.refactor() {
            Ok(()) => Ok(()),
            Err(e) => {
                self.state = old_state;
                self.basis = old_basis;
                self.factorized = false;
                Err(e)
            }
        }
    }

    pub fn total_iterations(&self) -> u64 {
        self.iterations
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.lb[j] == self.ub[j]
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::AtLower => self.lb[j],
            VarState::AtUpper => self.ub[j],
            VarState::Basic => unreachable!("nonbasic value of a basic column"),
        }
    }

    fn for_each_entry(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.n_struct {
            for &(i, c) in &self.prob.cols[j] {
                f(i, c);
            }
        } else {
            f(j - self.n_struct, 1.0);
        }
    }

    fn infeasibility_of(&self, i: usize) -> f64 {
        let l = self.basis[i];
        let x = self.xb[i];
        if x < self.lb[l] - PRIMAL_TOL {
            self.lb[l] - x
        } else if x > self.ub[l] + PRIMAL_TOL {
            x - self.ub[l]
        } else {
            0.0
        }
    }

    fn total_infeasibility(&self) -> f64 {
        (0..self.m).map(|i| self.infeasibility_of(i)).sum()
    }

    /// Solve from the current basis: restore feasibility if needed, then
    /// optimize. The session keeps the optimal basis for the next call.
    ///
    /// When the held basis is still dual feasible — the normal case after a
    /// bound change on a previously optimal basis — primal feasibility is
    /// repaired by dual pivots, which usually ends at the new optimum in a
    /// handful of steps. Otherwise the primal feasibility phase runs.
    pub fn solve(&mut self) -> LpOutcome {
        if !self.factorized {
            self.reset_cold();
        }
        self.stall = 0;
        self.bland = false;
        self.last_phase1_iters = 0;
        self.last_phase2_iters = 0;
        let before_p1 = self.iterations;
        if self.total_infeasibility() > FEAS_SUM_TOL && self.dual_feasible_enough() {
            match self.dual_repair() {
                DualEnd::Repaired | DualEnd::Bail => {}
                DualEnd::Infeasible { row } => return LpOutcome::Infeasible { row },
                DualEnd::Numerical(e) => return LpOutcome::Numerical(e),
            }
        }
        if self.total_infeasibility() > FEAS_SUM_TOL {
            // A wandering warm feasibility phase costs more than starting
            // over; give it a budget before falling back to a cold basis.
            let budget = 4 * self.m as u64 + 1000;
            match self.iterate_with_budget(true, Some(budget)) {
                PhaseEnd::Done => {}
                PhaseEnd::Budget => {
                    self.reset_cold();
                    match self.iterate(true) {
                        PhaseEnd::Done => {}
                        PhaseEnd::Unbounded | PhaseEnd::Budget => {
                            return LpOutcome::Numerical("feasibility phase diverged".into())
                        }
                        PhaseEnd::Numerical(e) => return LpOutcome::Numerical(e),
                    }
                }
                PhaseEnd::Unbounded => {
                    return LpOutcome::Numerical("feasibility phase diverged".into())
                }
                PhaseEnd::Numerical(e) => return LpOutcome::Numerical(e),
            }
            if self.total_infeasibility() > FEAS_SUM_TOL {
                let worst = (0..self.m)
                    .max_by(|&a, &b| {
                        self.infeasibility_of(a).total_cmp(&self.infeasibility_of(b))
                    })
                    .expect("rows exist");
                let col = self.basis[worst];
                let row = if col >= self.n_struct {
                    col - self.n_struct
                } else {
                    self.prob.cols[col]
                        .iter()
                        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                        .map(|&(i, _)| i)
                        .unwrap_or(worst)
                };
                return LpOutcome::Infeasible { row };
            }
        }
        self.last_phase1_iters = self.iterations - before_p1;
        self.stall = 0;
        self.bland = false;
        let before_p2 = self.iterations;
        match self.iterate(false) {
            PhaseEnd::Done => {}
            PhaseEnd::Unbounded => return LpOutcome::Unbounded,
            PhaseEnd::Budget => unreachable!("optimality phase runs unbudgeted"),
            PhaseEnd::Numerical(e) => return LpOutcome::Numerical(e),
        }

        self.last_phase2_iters = self.iterations - before_p2;
        let mut x = vec![0.0; self.n_struct];
        for j in 0..self.n_struct {
            if self.state[j] != VarState::Basic {
                x[j] = self.nonbasic_value(j);
            }
        }
        for i in 0..self.m {
            if self.basis[i] < self.n_struct {
                x[self.basis[i]] = self.xb[i];
            }
        }
        for (j, v) in x.iter_mut().enumerate() {
            if (*v - self.lb[j]).abs() < 1e-9 {
                *v = self.lb[j];
            } else if self.ub[j].is_finite() && (*v - self.ub[j]).abs() < 1e-9 {
                *v = self.ub[j];
            }
        }
        let objective = x
            .iter()
            .zip(self.prob.obj.iter())
            .map(|(xi, ci)| xi * ci)
            .sum();
        LpOutcome::Optimal(LpSolution {
            x,
            objective,
            iterations: self.iterations,
        })
    }

    /// Reduced-cost signs consistent with every nonbasic status, up to a
    /// small tolerance. Holds after an optimal solve and survives bound
    /// changes, which never touch reduced costs.
    fn dual_feasible_enough(&self) -> bool {
        let y = self.dual_prices(false);
        for j in 0..self.n_struct + self.m {
            if self.state[j] == VarState::Basic || self.is_fixed(j) {
                continue;
            }
            let mut dot = 0.0;
            self.for_each_entry(j, |i, c| dot += y[i] * c);
            let d = self.nonbasic_cost(j, false) - dot;
            let bad = match self.state[j] {
                VarState::AtLower => d < -1e-6,
                VarState::AtUpper => d > 1e-6,
                VarState::Basic => false,
            };
            if bad {
                return false;
            }
        }
        true
    }

    fn dual_prices(&self, phase1: bool) -> Vec<f64> {
        let mut y = vec![0.0; self.m];
        for i in 0..self.m {
            let cb = self.basic_cost(i, phase1);
            if cb != 0.0 {
                let row = &self.binv[i * self.m..(i + 1) * self.m];
                for (r, &v) in row.iter().enumerate() {
                    y[r] += cb * v;
                }
            }
        }
        y
    }

    /// Dual simplex sweep: drive out-of-bounds basics back inside while
    /// keeping reduced costs sign-consistent. Ends primal feasible
    /// (optimal up to the final pricing pass), proves infeasibility, or
    /// bails to the primal phases on trouble.
    fn dual_repair(&mut self) -> DualEnd {
        // The dual path is only worth it while it is fast; a repair that
        // needs more than a couple of sweeps of pivots is thrashing.
        let limit = 2 * self.m as u64 + 200;
        let mut steps: u64 = 0;
        loop {
            if steps > limit {
                return DualEnd::Bail;
            }
            steps += 1;
            self.iterations += 1;
            if self.iterations - self.last_refresh >= REFRESH_EVERY {
                if let Err(e) = self.refactor() {
                    return DualEnd::Numerical(e);
                }
            }

            // Most violated basic leaves.
            let mut row = None;
            let mut worst = PRIMAL_TOL;
            for i in 0..self.m {
                let v = self.infeasibility_of(i);
                if v > worst {
                    worst = v;
                    row = Some(i);
                }
            }
            let Some(r) = row else {
                return DualEnd::Repaired;
            };
            let leaving = self.basis[r];
            // Push toward the violated bound.
            let decrease = self.xb[r] > self.ub[leaving];
            let sign = if decrease { 1.0 } else { -1.0 };
            let target = if decrease {
                self.ub[leaving]
            } else {
                self.lb[leaving]
            };

            let alpha_row: Vec<f64> = self.binv[r * self.m..(r + 1) * self.m].to_vec();
            let y = self.dual_prices(false);

            let mut entering: Option<(usize, f64, f64)> = None; // (col, ratio, alpha)
            for j in 0..self.n_struct + self.m {
                if self.state[j] == VarState::Basic || self.is_fixed(j) {
                    continue;
                }
                let mut alpha = 0.0;
                self.for_each_entry(j, |i, c| alpha += alpha_row[i] * c);
                let directed = sign * alpha;
                let ok = match self.state[j] {
                    VarState::AtLower => directed > BLOCK_MIN,
                    VarState::AtUpper => directed < -BLOCK_MIN,
                    VarState::Basic => false,
                };
                if !ok {
                    continue;
                }
                let mut dot = 0.0;
                self.for_each_entry(j, |i, c| dot += y[i] * c);
                let d = self.nonbasic_cost(j, false) - dot;
                let ratio = (d / directed).max(0.0);
                let better = match entering {
                    None => true,
                    Some((_, best_ratio, best_alpha)) => {
                        ratio < best_ratio - 1e-10
                            || (ratio < best_ratio + 1e-10 && alpha.abs() > best_alpha.abs())
                    }
                };
                if better {
                    entering = Some((j, ratio, alpha));
                }
            }

            let Some((q, _, alpha_q)) = entering else {
                // Nothing can absorb the violation: the row is a witness.
                let col = self.basis[r];
                let row_idx = if col >= self.n_struct {
                    col - self.n_struct
                } else {
                    r
                };
                return DualEnd::Infeasible { row: row_idx };
            };
            if alpha_q.abs() < PIVOT_HARD_MIN {
                return DualEnd::Bail;
            }

            let mut w = vec![0.0; self.m];
            self.for_each_entry(q, |rr, c| {
                if c != 0.0 {
                    for i in 0..self.m {
                        w[i] += self.binv[i * self.m + rr] * c;
                    }
                }
            });
            // Step that lands the leaving variable exactly on its bound.
            let delta_q = (target - self.xb[r]) / (-w[r]);
            let range = self.ub[q] - self.lb[q];
            if range.is_finite() && delta_q.abs() > range + 1e-12 {
                // The entering variable saturates first: flip it and keep
                // repairing the same row on the next sweep.
                let flip = if delta_q > 0.0 { range } else { -range };
                for i in 0..self.m {
                    self.xb[i] -= flip * w[i];
                }
                self.state[q] = match self.state[q] {
                    VarState::AtLower => VarState::AtUpper,
                    VarState::AtUpper => VarState::AtLower,
                    VarState::Basic => unreachable!(),
                };
                continue;
            }

            let entering_value = self.nonbasic_value(q) + delta_q;
            for i in 0..self.m {
                self.xb[i] -= delta_q * w[i];
            }
            self.state[leaving] = if decrease {
                VarState::AtUpper
            } else {
                VarState::AtLower
            };
            self.basis[r] = q;
            self.state[q] = VarState::Basic;
            self.xb[r] = entering_value;
            if let Err(e) = self.apply_eta(r, &w) {
                return DualEnd::Numerical(e);
            }
        }
    }

    /// Phase-aware cost of a basic position: real objective in phase two,
    /// the infeasibility gradient in phase one.
    fn basic_cost(&self, i: usize, phase1: bool) -> f64 {
        let l = self.basis[i];
        if phase1 {
            let x = self.xb[i];
            if x < self.lb[l] - PRIMAL_TOL {
                -1.0
            } else if x > self.ub[l] + PRIMAL_TOL {
                1.0
            } else {
                0.0
            }
        } else if l < self.n_struct {
            self.prob.obj[l]
        } else {
            0.0
        }
    }

    fn nonbasic_cost(&self, j: usize, phase1: bool) -> f64 {
        if phase1 || j >= self.n_struct {
            0.0
        } else {
            self.prob.obj[j]
        }
    }

    fn iterate(&mut self, phase1: bool) -> PhaseEnd {
        self.iterate_with_budget(phase1, None)
    }

    fn iterate_with_budget(&mut self, phase1: bool, budget: Option<u64>) -> PhaseEnd {
        let mut spent: u64 = 0;
        loop {
            if let Some(limit) = budget {
                spent += 1;
                if spent > limit {
                    return PhaseEnd::Budget;
                }
            }
            self.iterations += 1;
            if self.iterations - self.last_refresh >= REFRESH_EVERY {
                if let Err(e) = self.refactor() {
                    return PhaseEnd::Numerical(e);
                }
            }
            if phase1 && self.total_infeasibility() <= FEAS_SUM_TOL {
                return PhaseEnd::Done;
            }

            // Pricing: y = c_B' B^-1, then reduced costs of movable columns.
            let mut y = vec![0.0; self.m];
            for i in 0..self.m {
                let cb = self.basic_cost(i, phase1);
                if cb != 0.0 {
                    let row = &self.binv[i * self.m..(i + 1) * self.m];
                    for (r, &v) in row.iter().enumerate() {
                        y[r] += cb * v;
                    }
                }
            }

            let mut entering: Option<(usize, f64, u64)> = None; // (col, |d|, prio)
            for j in 0..self.n_struct + self.m {
                if self.state[j] == VarState::Basic || self.is_fixed(j) {
                    continue;
                }
                let mut dot = 0.0;
                self.for_each_entry(j, |i, c| dot += y[i] * c);
                let d = self.nonbasic_cost(j, phase1) - dot;
                let eligible = match self.state[j] {
                    VarState::AtLower => d < -DUAL_TOL,
                    VarState::AtUpper => d > DUAL_TOL,
                    VarState::Basic => false,
                };
                if !eligible {
                    continue;
                }
                let score = d.abs();
                let prio = self.prio[j];
                let better = match entering {
                    None => true,
                    Some((_, best_score, best_prio)) => {
                        if self.bland {
                            prio < best_prio
                        } else if score > best_score * (1.0 + 1e-12) {
                            true
                        } else if score >= best_score * (1.0 - 1e-12) {
                            prio > best_prio
                        } else {
                            false
                        }
                    }
                };
                if better {
                    entering = Some((j, score, prio));
                }
            }

            let Some((j_in, _, _)) = entering else {
                return PhaseEnd::Done;
            };

            let dir = if self.state[j_in] == VarState::AtLower {
                1.0
            } else {
                -1.0
            };
            let mut w = vec![0.0; self.m];
            self.for_each_entry(j_in, |r, c| {
                if c != 0.0 {
                    for i in 0..self.m {
                        w[i] += self.binv[i * self.m + r] * c;
                    }
                }
            });

            // Ratio test: x_B moves by -dir*theta*w. Feasible basics block
            // at the bound they are pushed toward; infeasible basics block
            // at the violated bound they are returning to (phase one), and
            // the entering variable can at most flip to its other bound.
            let range = self.ub[j_in] - self.lb[j_in];
            let mut theta = if range.is_finite() {
                range
            } else {
                f64::INFINITY
            };
            let mut leaving: Option<(usize, f64, bool)> = None; // (row, |pivot|, to_upper)
            for i in 0..self.m {
                let delta = -dir * w[i];
                if delta.abs() <= BLOCK_MIN {
                    continue;
                }
                let l = self.basis[i];
                let x = self.xb[i];
                let below = x < self.lb[l] - PRIMAL_TOL;
                let above = x > self.ub[l] + PRIMAL_TOL;
                let (room, to_upper) = if below {
                    if delta > 0.0 {
                        (self.lb[l] - x, false)
                    } else {
                        continue;
                    }
                } else if above {
                    if delta < 0.0 {
                        (x - self.ub[l], true)
                    } else {
                        continue;
                    }
                } else if delta > 0.0 {
                    if self.ub[l].is_finite() {
                        (self.ub[l] - x, true)
                    } else {
                        continue;
                    }
                } else if self.lb[l].is_finite() {
                    (x - self.lb[l], false)
                } else {
                    continue;
                };
                let t = room.max(0.0) / delta.abs();
                if t < theta * (1.0 - RATIO_TOL) - 1e-12 {
                    theta = t;
                    leaving = Some((i, delta.abs(), to_upper));
                } else if t <= theta * (1.0 + RATIO_TOL) + 1e-12 {
                    let replace = match leaving {
                        None => t < theta,
                        Some((ri, rp, _)) => {
                            if self.bland {
                                self.prio[self.basis[i]] < self.prio[self.basis[ri]]
                            } else {
                                delta.abs() > rp
                            }
                        }
                    };
                    if replace {
                        theta = theta.min(t);
                        leaving = Some((i, delta.abs(), to_upper));
                    }
                }
            }

            if !theta.is_finite() {
                return if phase1 {
                    PhaseEnd::Numerical("unblocked direction in the feasibility phase".into())
                } else {
                    PhaseEnd::Unbounded
                };
            }
            let theta = theta.max(0.0);

            if theta <= 1e-10 {
                self.stall += 1;
                if self.stall > STALL_LIMIT {
                    self.bland = true;
                }
            } else {
                self.stall = 0;
                self.bland = false;
            }

            match leaving {
                None => {
                    // Bound flip: nothing leaves the basis.
                    for i in 0..self.m {
                        self.xb[i] -= dir * theta * w[i];
                    }
                    self.state[j_in] = if dir > 0.0 {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                }
                Some((r, _, to_upper)) => {
                    let pivot = w[r];
                    let inverse_is_stale =
                        self.iterations.saturating_sub(self.last_refresh) > 1;
                    if pivot.abs() < PIVOT_SOFT_MIN && inverse_is_stale {
                        // Suspiciously small pivot on a drifted inverse:
                        // refactor and redo the iteration. A fresh inverse
                        // reproducing it means it is genuine, and the next
                        // pass accepts it.
                        if let Err(e) = self.refactor() {
                            return PhaseEnd::Numerical(e);
                        }
                        continue;
                    }
                    if pivot.abs() < PIVOT_HARD_MIN {
                        return PhaseEnd::Numerical(format!(
                            "degenerate pivot {pivot:e} on a fresh inverse"
                        ));
                    }
                    let entering_value = if dir > 0.0 {
                        self.lb[j_in] + theta
                    } else {
                        self.ub[j_in] - theta
                    };
                    for i in 0..self.m {
                        self.xb[i] -= dir * theta * w[i];
                    }
                    let l = self.basis[r];
                    self.state[l] = if to_upper {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                    self.basis[r] = j_in;
                    self.state[j_in] = VarState::Basic;
                    self.xb[r] = entering_value;
                    if let Err(e) = self.apply_eta(r, &w) {
                        return PhaseEnd::Numerical(e);
                    }
                }
            }
        }
    }

    /// binv <- E * binv with the eta column from `w`, pivoting on row `r`.
    fn apply_eta(&mut self, r: usize, w: &[f64]) -> Result<(), String> {
        let pivot = w[r];
        if pivot.abs() < PIVOT_HARD_MIN {
            return Err(format!("eta update with pivot {pivot:e}"));
        }
        let inv_pivot = 1.0 / pivot;
        let (head, tail) = self.binv.split_at_mut(r * self.m);
        let (pivot_row, rest) = tail.split_at_mut(self.m);
        for v in pivot_row.iter_mut() {
            *v *= inv_pivot;
        }
        for (i, row) in head.chunks_exact_mut(self.m).enumerate() {
            let f = w[i];
            if f != 0.0 {
                for (rv, pv) in row.iter_mut().zip(pivot_row.iter()) {
                    *rv -= f * pv;
                }
            }
        }
        for (k, row) in rest.chunks_exact_mut(self.m).enumerate() {
            let f = w[r + 1 + k];
            if f != 0.0 {
                for (rv, pv) in row.iter_mut().zip(pivot_row.iter()) {
                    *rv -= f * pv;
                }
            }
        }
        Ok(())
    }

    /// Rebuild the inverse from the basis columns and recompute basic
    /// values; clears accumulated pivot drift.
    fn refactor(&mut self) -> Result<(), String> {
        self.last_refresh = self.iterations;
        self.refactor_count += 1;
        let m = self.m;
        let mut mat = vec![0.0; m * m];
        for (i, &j) in self.basis.iter().enumerate() {
            self.for_each_entry(j, |r, c| mat[r * m + i] = c);
        }
        let mut inv = identity(m);
        for col in 0..m {
            let mut piv_row = col;
            let mut piv_val = mat[col * m + col].abs();
            for r in col + 1..m {
                let v = mat[r * m + col].abs();
                if v > piv_val {
                    piv_val = v;
                    piv_row = r;
                }
            }
            if piv_val < 1e-12 {
                return Err(format!("singular basis at column {col}"));
            }
            if piv_row != col {
                for k in 0..m {
                    mat.swap(col * m + k, piv_row * m + k);
                    inv.swap(col * m + k, piv_row * m + k);
                }
            }
            let p = mat[col * m + col];
            let ip = 1.0 / p;
            for k in 0..m {
                mat[col * m + k] *= ip;
                inv[col * m + k] *= ip;
            }
            for r in 0..m {
                if r != col {
                    let f = mat[r * m + col];
                    if f != 0.0 {
                        for k in 0..m {
                            mat[r * m + k] -= f * mat[col * m + k];
                            inv[r * m + k] -= f * inv[col * m + k];
                        }
                    }
                }
            }
        }
        // Gauss-Jordan of the column-assembled basis yields its inverse in
        // the same positional order as `basis`, which is what xb indexes.
        self.binv = inv;
        self.factorized = true;
        self.recompute_xb();
        Ok(())
    }

    fn recompute_xb(&mut self) {
        let m = self.m;
        let mut r = self.prob.rhs.clone();
        for j in 0..self.n_struct + m {
            if self.state[j] != VarState::Basic {
                let v = self.nonbasic_value(j);
                if v != 0.0 {
                    self.for_each_entry(j, |i, c| r[i] -= c * v);
                }
            }
        }
        for i in 0..m {
            let mut v = 0.0;
            let row = &self.binv[i * m..(i + 1) * m];
            for (k, &b) in row.iter().enumerate() {
                v += b * r[k];
            }
            self.xb[i] = v;
        }
    }
}

enum PhaseEnd {
    Done,
    Unbounded,
    Budget,
    Numerical(String),
}

enum DualEnd {
    Repaired,
    Infeasible { row: usize },
    Bail,
    Numerical(String),
}

fn identity(m: usize) -> Vec<f64> {
    let mut v = vec![0.0; m * m];
    for i in 0..m {
        v[i * m + i] = 1.0;
    }
    v
}
