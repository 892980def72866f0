//! Fee design via multi-objective particle swarm with an exact inner solver.
//!
//! Each particle is a treatment-fee vector. Evaluating a particle means
//! solving the carrier's scheduling MILP under those fees, then scoring the
//! resulting schedule on pollution (F1) and negative government revenue
//! (F2). Non-dominated (fees, F1, F2) points live in a bounded external
//! archive; a hypercube grid over objective space biases leader selection
//! toward sparse regions and eviction toward crowded ones. The search stops
//! early when both best objectives stop moving in relative terms.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::emissions::{pollution_index, EmissionsError};
use crate::model::{
    assemble_lower, government_revenue, FeeSchedule, FlowSolution, ModelError, SolveStatus,
};
use crate::scenario::Scenario;
use crate::solver::{solve, SolveConfig, SolveError};
use crate::util::{ceil5, derive_seed, floor5, trunc5};

#[derive(Debug, Error)]
pub enum BilevelError {
    #[error("bad swarm configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolveError),
    #[error(transparent)]
    Emissions(#[from] EmissionsError),
    #[error("inner problem infeasible for fee vector {fees:?}: {certificate}")]
    InnerInfeasible { fees: Vec<f64>, certificate: String },
    #[error("inner solver ran out of budget before finding any schedule for fee vector {fees:?}")]
    InnerNoIncumbent { fees: Vec<f64> },
}

#[derive(Debug, Clone, Serialize)]
pub struct MopsoConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub archive_capacity: usize,
    pub grid_divisions: usize,
    pub perturb_prob: f64,
    /// Iterations of an unchanged best point before perturbation kicks in.
    pub stagnation_window: usize,
    /// Perturbation half-range as a fraction of the fee box width.
    pub perturb_scale: f64,
    /// Relative change below which both objectives count as converged.
    pub convergence_tol: f64,
    /// Start particle 0 at the market fee so the no-subsidy schedule is
    /// always part of the archive.
    pub seed_market_particle: bool,
}

impl Default for MopsoConfig {
    fn default() -> Self {
        MopsoConfig {
            particles: 40,
            iterations: 20,
            inertia: 0.8,
            cognitive: 0.1,
            social: 0.1,
            archive_capacity: 200,
            grid_divisions: 10,
            perturb_prob: 0.2,
            stagnation_window: 3,
            perturb_scale: 0.2,
            convergence_tol: 1e-3,
            seed_market_particle: true,
        }
    }
}

impl MopsoConfig {
    fn validate(&self) -> Result<(), BilevelError> {
        let mut problems = Vec::new();
        if self.particles == 0 {
            problems.push("particles must be >= 1");
        }
        if self.iterations == 0 {
            problems.push("iterations must be >= 1");
        }
        if self.archive_capacity == 0 {
            problems.push("archive_capacity must be >= 1");
        }
        if self.grid_divisions == 0 {
            problems.push("grid_divisions must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.perturb_prob) {
            problems.push("perturb_prob must lie in [0, 1]");
        }
        if self.perturb_scale < 0.0 {
            problems.push("perturb_scale must be >= 0");
        }
        if !(self.convergence_tol > 0.0) {
            problems.push("convergence_tol must be > 0");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(BilevelError::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_objectives: Option<(f64, f64)>,
}

/// Project each component into the fee box, flipping the velocity of any
/// component that hit a wall, then truncate to the five-decimal fee grid.
pub fn repair(particle: &mut Particle, lower: f64, upper: f64) {
    for (y, v) in particle.position.iter_mut().zip(particle.velocity.iter_mut()) {
        if *y < lower {
            *y = lower;
            *v = -*v;
        } else if *y > upper {
            *y = upper;
            *v = -*v;
        }
        let mut t = trunc5(*y);
        if t < lower {
            t = ceil5(lower);
        } else if t > upper {
            t = floor5(upper);
        }
        *y = t;
    }
}

/// Blend of inertia, pull toward the particle's own best, and pull toward
/// the archive leader. `r1`, `r2` are fresh uniforms in [0, 1].
pub fn update_velocity(
    particle: &mut Particle,
    leader: &[f64],
    config: &MopsoConfig,
    r1: f64,
    r2: f64,
) {
    for j in 0..particle.velocity.len() {
        particle.velocity[j] = config.inertia * particle.velocity[j]
            + config.cognitive * r1 * (particle.best_position[j] - particle.position[j])
            + config.social * r2 * (leader[j] - particle.position[j]);
    }
}

/// Step the position by the current velocity. Perturbation and repair are
/// applied by the caller afterwards.
pub fn update_position(particle: &mut Particle) {
    for j in 0..particle.position.len() {
        particle.position[j] += particle.velocity[j];
    }
}

/// Componentwise uniform shift within `±scale * (upper - lower)`.
pub fn perturb(particle: &mut Particle, rng: &mut ChaCha8Rng, lower: f64, upper: f64, scale: f64) {
    let half = scale * (upper - lower);
    if half <= 0.0 {
        return;
    }
    for y in particle.position.iter_mut() {
        *y += rng.random_range(-half..=half);
    }
}

/// Both objectives moved by less than `tol` in relative terms (denominator
/// floored at 1 so near-zero revenue cannot blow the ratio up).
pub fn terminated(previous: (f64, f64), current: (f64, f64), tol: f64) -> bool {
    let rel = |prev: f64, cur: f64| (cur - prev).abs() / cur.abs().max(1.0);
    rel(previous.0, current.0) < tol && rel(previous.1, current.1) < tol
}

#[derive(Debug, Clone)]
pub struct ArchiveEntry {
    pub position: Vec<f64>,
    pub f1: f64,
    pub f2: f64,
    pub solution: Arc<FlowSolution>,
}

/// Bounded non-dominated set over (F1, F2), minimizing both.
#[derive(Debug, Clone)]
pub struct ParetoArchive {
    pub capacity: usize,
    pub grid_divisions: usize,
    pub entries: Vec<ArchiveEntry>,
}

struct Grid {
    occupancy: Vec<Vec<usize>>,
}

impl ParetoArchive {
    pub fn new(capacity: usize, grid_divisions: usize) -> ParetoArchive {
        ParetoArchive {
            capacity,
            grid_divisions,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Insert a candidate point. Weakly dominated candidates (equal points
    /// included) are rejected; members the candidate dominates are evicted;
    /// capacity overflow deletes a random member of the densest hypercube.
    /// Returns whether the candidate made it in.
    pub fn insert(&mut self, entry: ArchiveEntry, rng: &mut ChaCha8Rng) -> bool {
        if self
            .entries
            .iter()
            .any(|m| m.f1 <= entry.f1 && m.f2 <= entry.f2)
        {
            return false;
        }
        self.entries
            .retain(|m| !(entry.f1 <= m.f1 && entry.f2 <= m.f2));
        self.entries.push(entry);
        if self.entries.len() > self.capacity {
            let grid = self.grid();
            let densest = grid
                .occupancy
                .iter()
                .enumerate()
                .max_by_key(|(_, members)| members.len())
                .map(|(c, _)| c)
                .expect("archive is non-empty");
            let members = &grid.occupancy[densest];
            let evict = members[rng.random_range(0..members.len())];
            self.entries.remove(evict);
        }
        true
    }

    /// Hypercube grid over the current objective extent, 5% padding on each
    /// side so boundary points do not pile into edge cells.
    fn grid(&self) -> Grid {
        let m = self.grid_divisions;
        let (mut f1_lo, mut f1_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut f2_lo, mut f2_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for e in &self.entries {
            f1_lo = f1_lo.min(e.f1);
            f1_hi = f1_hi.max(e.f1);
            f2_lo = f2_lo.min(e.f2);
            f2_hi = f2_hi.max(e.f2);
        }
        let pad = |lo: f64, hi: f64| {
            let span = if hi > lo { hi - lo } else { 1.0 };
            (lo - 0.05 * span, hi + 0.05 * span)
        };
        let (a1, b1) = pad(f1_lo, f1_hi);
        let (a2, b2) = pad(f2_lo, f2_hi);
        let index = |v: f64, lo: f64, hi: f64| -> usize {
            let raw = ((v - lo) / (hi - lo) * m as f64).floor();
            (raw.max(0.0) as usize).min(m - 1)
        };
        let mut occupancy = vec![Vec::new(); m * m];
        for (i, e) in self.entries.iter().enumerate() {
            let c = index(e.f1, a1, b1) * m + index(e.f2, a2, b2);
            occupancy[c].push(i);
        }
        Grid { occupancy }
    }

    /// Roulette selection over occupied cells with weight 1/occupancy, then
    /// uniform within the winning cell: sparse regions lead more often.
    pub fn select_leader(&self, rng: &mut ChaCha8Rng) -> &ArchiveEntry {
        assert!(!self.entries.is_empty(), "leader selection on empty archive");
        if self.entries.len() == 1 {
            return &self.entries[0];
        }
        let grid = self.grid();
        let occupied: Vec<usize> = (0..grid.occupancy.len())
            .filter(|&c| !grid.occupancy[c].is_empty())
            .collect();
        let weights: Vec<f64> = occupied
            .iter()
            .map(|&c| 1.0 / grid.occupancy[c].len() as f64)
            .collect();
        let total: f64 = weights.iter().sum();
        let mut ticket = rng.random_range(0.0..total);
        let mut winner = *occupied.last().unwrap();
        for (&c, &w) in occupied.iter().zip(weights.iter()) {
            if ticket < w {
                winner = c;
                break;
            }
            ticket -= w;
        }
        let members = &grid.occupancy[winner];
        let pick = members[rng.random_range(0..members.len())];
        &self.entries[pick]
    }

    /// Member with the smallest F1; ties resolved toward the smaller F2.
    pub fn best(&self) -> Option<&ArchiveEntry> {
        self.entries
            .iter()
            .min_by(|a, b| a.f1.total_cmp(&b.f1).then(a.f2.total_cmp(&b.f2)))
    }

    pub fn objectives(&self) -> Vec<(f64, f64)> {
        self.entries.iter().map(|e| (e.f1, e.f2)).collect()
    }
}

/// Solve the carrier's problem under the given fee vector and score it.
pub fn evaluate(
    scenario: &Scenario,
    position: &[f64],
    solve_cfg: &SolveConfig,
    seed: u64,
) -> Result<(FlowSolution, f64, f64), BilevelError> {
    let fees = FeeSchedule::from_values(scenario, position.to_vec())?;
    let instance = assemble_lower(scenario, &fees)?;
    let cfg = SolveConfig {
        seed,
        ..solve_cfg.clone()
    };
    let (solution, _stats) = solve(&instance, &cfg)?;
    match solution.status {
        SolveStatus::Infeasible => {
            return Err(BilevelError::InnerInfeasible {
                fees: position.to_vec(),
                certificate: solution
                    .infeasibility
                    .clone()
                    .unwrap_or_else(|| "infeasible".into()),
            })
        }
        SolveStatus::TimeLimit if solution.objective_value.is_nan() => {
            return Err(BilevelError::InnerNoIncumbent {
                fees: position.to_vec(),
            })
        }
        _ => {}
    }
    let f1 = pollution_index(&solution, scenario)?.total;
    let f2 = -government_revenue(&solution, scenario, &fees);
    Ok((solution, f1, f2))
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub best_f1: f64,
    pub best_f2: f64,
    pub archive_size: usize,
}

#[derive(Debug, Clone)]
pub struct BestMember {
    pub fees: FeeSchedule,
    pub position: Vec<f64>,
    pub f1: f64,
    pub f2: f64,
    pub solution: Arc<FlowSolution>,
}

#[derive(Debug)]
pub struct MopsoRun {
    pub archive: ParetoArchive,
    pub best: BestMember,
    pub history: Vec<IterationRecord>,
    /// Archive objectives per iteration, for offline inspection of front
    /// shape and gaps.
    pub archive_log: Vec<Vec<(f64, f64)>>,
    pub iterations_run: usize,
    pub converged: bool,
    pub evaluations: usize,
}

/// Run the swarm. Fully deterministic in `seed`: particle streams, solver
/// seeds, and archive decisions all derive from it, and parallel particle
/// evaluation does not change results.
pub fn optimize(
    scenario: &Scenario,
    config: &MopsoConfig,
    solve_cfg: &SolveConfig,
    seed: u64,
) -> Result<MopsoRun, BilevelError> {
    config.validate()?;
    let lower = scenario.econ.fee_lower_cny_per_tonne;
    let upper = scenario.econ.fee_upper_cny_per_tonne;
    let dim = FeeSchedule::dimension(scenario);
    let k_particles = config.particles;

    let mut particle_rngs: Vec<ChaCha8Rng> = (0..k_particles)
        .map(|k| ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7061, k as u64, 0)))
        .collect();
    let mut archive_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x6172, 0, 0));

    let vel_half = 0.1 * (upper - lower);
    let mut particles: Vec<Particle> = (0..k_particles)
        .map(|k| {
            let rng = &mut particle_rngs[k];
            let position: Vec<f64> = if k == 0 && config.seed_market_particle {
                vec![scenario.econ.market_fee_cny_per_tonne; dim]
            } else {
                (0..dim).map(|_| rng.random_range(lower..=upper)).collect()
            };
            let velocity: Vec<f64> = (0..dim)
                .map(|_| {
                    if vel_half > 0.0 {
                        rng.random_range(-vel_half..=vel_half)
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut p = Particle {
                best_position: position.clone(),
                position,
                velocity,
                best_objectives: None,
            };
            repair(&mut p, lower, upper);
            p.best_position = p.position.clone();
            p
        })
        .collect();

    let mut archive = ParetoArchive::new(config.archive_capacity, config.grid_divisions);
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut archive_log: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut stagnation_streak = 0usize;
    let mut last_key: Option<(f64, f64)> = None;
    let mut converged = false;
    let mut evaluations = 0usize;
    let mut iterations_run = 0usize;

    for iter in 0..config.iterations {
        iterations_run = iter + 1;

        // Independent inner solves; results are ordered by particle index,
        // so scheduling cannot change the outcome.
        let results: Vec<Result<(FlowSolution, f64, f64), BilevelError>> = particles
            .par_iter()
            .enumerate()
            .map(|(k, p)| {
                let eval_seed = derive_seed(seed, 0x6576, iter as u64, k as u64);
                evaluate(scenario, &p.position, solve_cfg, eval_seed)
            })
            .collect();

        for (k, result) in results.into_iter().enumerate() {
            let (solution, f1, f2) = result?;
            evaluations += 1;
            archive.insert(
                ArchiveEntry {
                    position: particles[k].position.clone(),
                    f1,
                    f2,
                    solution: Arc::new(solution),
                },
                &mut archive_rng,
            );
            let p = &mut particles[k];
            match p.best_objectives {
                None => {
                    p.best_objectives = Some((f1, f2));
                    p.best_position = p.position.clone();
                }
                Some((bf1, bf2)) => {
                    let dominates_old = f1 <= bf1 && f2 <= bf2 && (f1 < bf1 || f2 < bf2);
                    let old_dominates = bf1 <= f1 && bf2 <= f2;
                    if dominates_old
                        || (!old_dominates && particle_rngs[k].random_range(0.0..1.0) < 0.5)
                    {
                        p.best_objectives = Some((f1, f2));
                        p.best_position = p.position.clone();
                    }
                }
            }
        }

        let best = archive.best().expect("archive non-empty after evaluations");
        let key = (best.f1, best.f2);
        history.push(IterationRecord {
            iteration: iter,
            best_f1: key.0,
            best_f2: key.1,
            archive_size: archive.len(),
        });
        archive_log.push(archive.objectives());

        if let Some(prev) = last_key {
            if terminated(prev, key, config.convergence_tol) {
                converged = true;
                break;
            }
            let same = (trunc5(prev.0), trunc5(prev.1)) == (trunc5(key.0), trunc5(key.1));
            stagnation_streak = if same { stagnation_streak + 1 } else { 0 };
        }
        last_key = Some(key);
        let perturb_active = stagnation_streak >= config.stagnation_window;

        if iter + 1 == config.iterations {
            break;
        }

        for k in 0..k_particles {
            let leader = archive.select_leader(&mut archive_rng).position.clone();
            let rng = &mut particle_rngs[k];
            let r1: f64 = rng.random_range(0.0..=1.0);
            let r2: f64 = rng.random_range(0.0..=1.0);
            update_velocity(&mut particles[k], &leader, config, r1, r2);
            update_position(&mut particles[k]);
            if perturb_active {
                let gate: f64 = particle_rngs[k].random_range(0.0..1.0);
                if gate < config.perturb_prob {
                    perturb(
                        &mut particles[k],
                        &mut particle_rngs[k],
                        lower,
                        upper,
                        config.perturb_scale,
                    );
                }
            }
            repair(&mut particles[k], lower, upper);
        }
    }

    let best = archive.best().expect("archive is non-empty");
    let best = BestMember {
        fees: FeeSchedule::from_values(scenario, best.position.clone())?,
        position: best.position.clone(),
        f1: best.f1,
        f2: best.f2,
        solution: best.solution.clone(),
    };
    Ok(MopsoRun {
        archive,
        best,
        history,
        archive_log,
        iterations_run,
        converged,
        evaluations,
    })
}
