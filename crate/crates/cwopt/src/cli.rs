//! Command-line front end.
//!
//! Subcommands: `generate` (synthetic scenario), `network` (support-graph
//! diagnostics), `solve-carrier` (profit baseline), `solve-hpr` (pollution
//! bound), `optimize-subsidy` (fee design with bundled baseline and bound
//! runs plus metrics), `sweep` (sensitivity grids), and `replay` (re-run a
//! recorded manifest). Every run writes a manifest that pins the scenario
//! hash, seed, and config so it can be replayed exactly.
//!
//! Exit codes: 0 success, 2 infeasible, 3 configuration error, 4 time limit
//! hit before any schedule was found.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bilevel::{self, BilevelError, MopsoConfig, MopsoRun};
use crate::emissions::{pollution_index, PollutionBreakdown};
use crate::metrics::{metrics_report, MetricsError, RunTriple};
use crate::model::{
    assemble_hpr, assemble_m1, carrier_profit, government_revenue, FeeSchedule, FlowSolution,
    SolveStatus,
};
use crate::network::build_network;
use crate::scenario::{generate_scenario, load_scenario, GeneratorConfig, Scenario};
use crate::solver::{solve, SolveConfig, SolveStats};
use crate::util::derive_seed;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unreadable files, invalid scenarios.
    Config(String),
    /// The scheduling problem has no feasible solution.
    Infeasible(String),
    /// Budget exhausted before any incumbent existed.
    NoIncumbent,
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Infeasible(_) => 2,
            CliError::NoIncumbent => 4,
            CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Infeasible(m) | CliError::Other(m) => m.clone(),
            CliError::NoIncumbent => "time limit hit before any schedule was found".into(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Infeasible(_) => "infeasible",
            CliError::NoIncumbent => "no_incumbent",
            CliError::Other(_) => "error",
        }
    }
}

impl From<BilevelError> for CliError {
    fn from(e: BilevelError) -> Self {
        match e {
            BilevelError::InnerInfeasible { .. } => CliError::Infeasible(e.to_string()),
            BilevelError::InnerNoIncumbent { .. } => CliError::NoIncumbent,
            BilevelError::Config(m) => CliError::Config(m),
            other => CliError::Other(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "cwopt",
    about = "Construction-waste truck scheduling and treatment-fee design",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic scenario file.
    Generate(GenerateArgs),
    /// Report the support graph; optionally dump its edge list as CSV.
    Network(NetworkArgs),
    /// Solve the carrier's profit problem at the market treatment fee.
    SolveCarrier(SolveArgs),
    /// Solve the pollution minimum over the carrier's feasible region.
    SolveHpr(SolveArgs),
    /// Design treatment fees with the swarm + exact-solver hybrid.
    OptimizeSubsidy(OptimizeArgs),
    /// Run one optimization per grid point along a parameter axis.
    Sweep(SweepArgs),
    /// Re-run a recorded manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Scenario file (JSON; see docs/scenario.schema.json).
    #[arg(long)]
    scenario: PathBuf,
    /// Master seed for every random stream of the run.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Artifact directory.
    #[arg(long, env = "CWOPT_OUT", default_value = "cwopt-out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SolveFlags {
    /// Relative optimality gap to stop at (0 proves optimality).
    #[arg(long, default_value_t = 0.0)]
    gap: f64,
    /// Wall-clock limit per solve, seconds.
    #[arg(long, default_value_t = 600.0)]
    time_limit: f64,
}

#[derive(Args, Debug, Clone)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    solve: SolveFlags,
    /// Export the assembled model in LP text format (filename inside OUT).
    #[arg(long)]
    export_lp: Option<String>,
    /// Dump the support-graph edge list as CSV (filename inside OUT).
    #[arg(long)]
    dump_network: Option<String>,
    /// Write solver progress lines to progress.csv.
    #[arg(long, default_value_t = false)]
    progress: bool,
}

#[derive(Args, Debug, Clone)]
struct OptimizeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    solve: SolveFlags,
    /// Swarm size.
    #[arg(long, default_value_t = 40)]
    particles: usize,
    /// Outer iterations.
    #[arg(long, default_value_t = 20)]
    iterations: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
enum SweepAxis {
    /// Vary the fee upper bound; the lower bound tracks it 10 CNY/t below.
    FeeBounds,
    /// Vary the truck count of the first electric fleet.
    ElectricCount,
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    solve: SolveFlags,
    #[arg(long, default_value_t = 8)]
    particles: usize,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    #[arg(long, value_enum)]
    axis: SweepAxis,
    /// Inclusive grid `start:stop:step`, e.g. `3:7:0.5`.
    #[arg(long)]
    range: String,
    /// Concurrent grid points.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug, Clone)]
struct GenerateArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 17)]
    production: usize,
    #[arg(long, default_value_t = 10)]
    backfill: usize,
    #[arg(long, default_value_t = 3)]
    processing: usize,
    #[arg(long, default_value_t = 20.0)]
    bbox_km: f64,
    #[arg(long, env = "CWOPT_OUT", default_value = "cwopt-out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct NetworkArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, env = "CWOPT_OUT", default_value = "cwopt-out")]
    out: PathBuf,
    /// Edge-list CSV filename inside OUT.
    #[arg(long)]
    edges: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct ReplayArgs {
    /// manifest.json of a previous run.
    #[arg(long)]
    manifest: PathBuf,
    /// Artifact directory for the replayed run (defaults to the recorded
    /// command's own --out).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Everything needed to re-run a command byte-for-byte (wall time aside).
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_path: Option<String>,
    pub scenario_hash: Option<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub wall_time_secs: f64,
    pub artifacts: Vec<String>,
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version through the same error path.
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!(
                "{}",
                json!({ "error": e.kind(), "detail": e.message() })
            );
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Network(args) => cmd_network(&args),
        Command::SolveCarrier(args) => cmd_solve(&args, SolveKind::Carrier),
        Command::SolveHpr(args) => cmd_solve(&args, SolveKind::Hpr),
        Command::OptimizeSubsidy(args) => cmd_optimize(&args).map(|_| ()),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Replay(args) => cmd_replay(&args),
    }
}

fn load(path: &Path) -> Result<Scenario, CliError> {
    let scenario = load_scenario(path).map_err(|e| CliError::Config(e.to_string()))?;
    for w in scenario.feasibility_warnings() {
        eprintln!("warning: {w}");
    }
    Ok(scenario)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<String, CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))?;
    Ok(name.to_string())
}

fn write_manifest(
    dir: &Path,
    command: &str,
    scenario: Option<(&Path, &str)>,
    seed: u64,
    config: serde_json::Value,
    wall: f64,
    artifacts: Vec<String>,
) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: command.to_string(),
        scenario_path: scenario.map(|(p, _)| p.display().to_string()),
        scenario_hash: scenario.map(|(_, h)| h.to_string()),
        seed,
        config,
        wall_time_secs: wall,
        artifacts,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Other(e.to_string()))?;
    write_file(dir, "manifest.json", &text)?;
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    ensure_dir(&args.out)?;
    let cfg = GeneratorConfig {
        seed: args.seed,
        production: args.production,
        backfill: args.backfill,
        processing: args.processing,
        bbox_km: args.bbox_km,
        ..GeneratorConfig::default()
    };
    if args.production == 0 || args.backfill == 0 || args.processing == 0 {
        return Err(CliError::Config(
            "production, backfill, and processing counts must all be >= 1".into(),
        ));
    }
    let scenario = generate_scenario(&cfg);
    let text = serde_json::to_string_pretty(&scenario)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let artifact = write_file(&args.out, "scenario.json", &text)?;
    println!(
        "{}",
        json!({
            "scenario": args.out.join(&artifact),
            "sites": scenario.sites.len(),
            "hash": scenario.content_hash(),
        })
    );
    write_manifest(
        &args.out,
        "generate",
        None,
        args.seed,
        json!({
            "production": args.production,
            "backfill": args.backfill,
            "processing": args.processing,
            "bbox_km": args.bbox_km,
        }),
        started.elapsed().as_secs_f64(),
        vec![artifact],
    )
}

fn cmd_network(args: &NetworkArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let scenario = load(&args.scenario)?;
    ensure_dir(&args.out)?;
    let net = build_network(&scenario);
    let census = net.census();
    let mut artifacts = Vec::new();
    if let Some(name) = &args.edges {
        let mut buf = Vec::new();
        net.write_edge_csv(&mut buf)
            .map_err(|e| CliError::Other(e.to_string()))?;
        artifacts.push(write_file(
            &args.out,
            name,
            &String::from_utf8_lossy(&buf),
        )?);
    }
    println!(
        "{}",
        json!({
            "nodes": net.node_count(),
            "arcs": census.total(),
            "fully_loaded": census.fully_loaded,
            "deadheading": census.deadheading,
            "service": census.service,
            "pruning_ratio": net.pruning_ratio(),
            "virtual_horizon": net.virtual_horizon,
        })
    );
    write_manifest(
        &args.out,
        "network",
        Some((&args.scenario, &scenario.content_hash())),
        0,
        json!({ "edges": args.edges }),
        started.elapsed().as_secs_f64(),
        artifacts,
    )
}

#[derive(Copy, Clone, PartialEq)]
enum SolveKind {
    Carrier,
    Hpr,
}

impl SolveKind {
    fn name(self) -> &'static str {
        match self {
            SolveKind::Carrier => "solve-carrier",
            SolveKind::Hpr => "solve-hpr",
        }
    }
}

fn solve_config(flags: &SolveFlags, seed: u64, progress: Option<PathBuf>) -> SolveConfig {
    SolveConfig {
        gap_target: flags.gap,
        time_limit_secs: flags.time_limit,
        seed,
        node_limit: None,
        progress_path: progress,
        log_every_nodes: 50,
    }
}

fn cmd_solve(args: &SolveArgs, kind: SolveKind) -> Result<(), CliError> {
    let started = Instant::now();
    let scenario = load(&args.common.scenario)?;
    ensure_dir(&args.common.out)?;
    let hash = scenario.content_hash();
    let mut artifacts = Vec::new();

    let instance = match kind {
        SolveKind::Carrier => assemble_m1(&scenario, scenario.econ.market_fee_cny_per_tonne),
        SolveKind::Hpr => assemble_hpr(&scenario),
    };
    if let Some(name) = &args.export_lp {
        let mut buf = Vec::new();
        instance
            .write_lp(&mut buf)
            .map_err(|e| CliError::Other(e.to_string()))?;
        artifacts.push(write_file(
            &args.common.out,
            name,
            &String::from_utf8_lossy(&buf),
        )?);
    }
    if let Some(name) = &args.dump_network {
        let mut buf = Vec::new();
        build_network(&scenario)
            .write_edge_csv(&mut buf)
            .map_err(|e| CliError::Other(e.to_string()))?;
        artifacts.push(write_file(
            &args.common.out,
            name,
            &String::from_utf8_lossy(&buf),
        )?);
    }

    let progress = args
        .progress
        .then(|| args.common.out.join("progress.csv"));
    if progress.is_some() {
        artifacts.push("progress.csv".to_string());
    }
    let cfg = solve_config(&args.solve, args.common.seed, progress);
    let (solution, stats) =
        solve(&instance, &cfg).map_err(|e| CliError::Other(e.to_string()))?;

    let config_echo = json!({
        "gap": args.solve.gap,
        "time_limit": args.solve.time_limit,
        "export_lp": args.export_lp,
        "dump_network": args.dump_network,
        "progress": args.progress,
    });

    match solution.status {
        SolveStatus::Infeasible => {
            let certificate = solution
                .infeasibility
                .clone()
                .unwrap_or_else(|| "infeasible".into());
            let summary = format!("metric,value\nstatus,infeasible\ncertificate,{certificate}\n");
            artifacts.push(write_file(&args.common.out, "summary.csv", &summary)?);
            write_manifest(
                &args.common.out,
                kind.name(),
                Some((&args.common.scenario, &hash)),
                args.common.seed,
                config_echo,
                started.elapsed().as_secs_f64(),
                artifacts,
            )?;
            return Err(CliError::Infeasible(certificate));
        }
        SolveStatus::TimeLimit if solution.objective_value.is_nan() => {
            write_manifest(
                &args.common.out,
                kind.name(),
                Some((&args.common.scenario, &hash)),
                args.common.seed,
                config_echo,
                started.elapsed().as_secs_f64(),
                artifacts,
            )?;
            return Err(CliError::NoIncumbent);
        }
        _ => {}
    }

    let market_fees = FeeSchedule::uniform(&scenario, scenario.econ.market_fee_cny_per_tonne);
    let breakdown =
        pollution_index(&solution, &scenario).map_err(|e| CliError::Other(e.to_string()))?;
    let profit = carrier_profit(&solution, &scenario, &market_fees);
    let revenue = government_revenue(&solution, &scenario, &market_fees);

    let summary = solve_summary(
        &scenario, &solution, &stats, &breakdown, profit, revenue, kind,
    );
    artifacts.push(write_file(&args.common.out, "summary.csv", &summary)?);
    artifacts.push(write_file(
        &args.common.out,
        "flows.csv",
        &flows_csv(&solution),
    )?);

    println!(
        "{}",
        json!({
            "status": solution.status,
            "objective": solution.objective_value,
            "gap": stats.gap,
            "pollution_index": breakdown.total,
            "carrier_profit_cny": profit,
            "government_revenue_cny": revenue,
            "nodes": stats.nodes_explored,
        })
    );

    write_manifest(
        &args.common.out,
        kind.name(),
        Some((&args.common.scenario, &hash)),
        args.common.seed,
        config_echo,
        started.elapsed().as_secs_f64(),
        artifacts,
    )
}

fn solve_summary(
    scenario: &Scenario,
    solution: &FlowSolution,
    stats: &SolveStats,
    breakdown: &PollutionBreakdown,
    profit: f64,
    revenue: f64,
    kind: SolveKind,
) -> String {
    let mut s = String::from("metric,value\n");
    let status = match solution.status {
        SolveStatus::OptimalWithinGap => "optimal_within_gap",
        SolveStatus::TimeLimit => "time_limit",
        SolveStatus::Infeasible => "infeasible",
    };
    let _ = writeln!(s, "model,{}", kind.name());
    let _ = writeln!(s, "status,{status}");
    let _ = writeln!(s, "objective,{}", solution.objective_value);
    let _ = writeln!(s, "solver_gap,{}", stats.gap);
    let _ = writeln!(s, "runtime_secs,{:.3}", stats.wall_time_secs);
    let _ = writeln!(s, "nodes_explored,{}", stats.nodes_explored);
    let _ = writeln!(s, "lp_iterations,{}", stats.lp_iterations);
    let _ = writeln!(s, "tie_candidates,{}", stats.tie_candidates);
    let _ = writeln!(s, "best_bound,{}", stats.best_bound);
    let _ = writeln!(s, "carrier_profit_cny,{profit}");
    let _ = writeln!(s, "government_revenue_cny,{revenue}");
    let _ = writeln!(s, "pollution_index,{}", breakdown.total);
    let _ = writeln!(s, "pollution_engine_term,{}", breakdown.engine_term);
    let _ = writeln!(s, "pollution_unladen_term,{}", breakdown.unladen_term);
    let _ = writeln!(s, "pollution_payload_term,{}", breakdown.payload_term);
    let _ = writeln!(s, "pollution_speed_term,{}", breakdown.speed_term);
    let _ = writeln!(s, "pollution_facility_term,{}", breakdown.facility_term);
    let dispatch = solution.dispatch_census(scenario);
    let _ = writeln!(
        s,
        "dispatched_trucks_total,{}",
        dispatch.iter().sum::<u32>()
    );
    for (v, count) in dispatch.iter().enumerate() {
        let _ = writeln!(
            s,
            "dispatched_fleet_{v}_{},{count}",
            scenario.fleets[v].kind.label()
        );
    }
    let tonnage = solution.tonnage_census(scenario);
    for (v, tonnes) in tonnage.per_fleet.iter().enumerate() {
        let _ = writeln!(
            s,
            "tonnes_fleet_{v}_{},{tonnes}",
            scenario.fleets[v].kind.label()
        );
    }
    let _ = writeln!(
        s,
        "tonnes_production_to_processing,{}",
        tonnage.production_to_processing
    );
    let _ = writeln!(
        s,
        "tonnes_production_to_backfill,{}",
        tonnage.production_to_backfill
    );
    let _ = writeln!(
        s,
        "tonnes_processing_to_backfill,{}",
        tonnage.processing_to_backfill
    );
    let _ = writeln!(s, "tonnes_total,{}", tonnage.total);
    s
}

fn flows_csv(solution: &FlowSolution) -> String {
    let mut s = String::from("from,to,fleet,waste_type,depart,arrive,class,flow\n");
    for e in solution.entries() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            e.from,
            e.to,
            e.fleet,
            e.waste_type.map(|c| c.to_string()).unwrap_or_default(),
            e.depart,
            e.arrive,
            e.class.label(),
            e.flow
        );
    }
    s
}

/// Outcome of one full fee-design pipeline (baseline + bound + swarm).
pub struct OptimizeOutcome {
    pub best_f1: f64,
    pub best_f2: f64,
    pub carrier_profit: f64,
    pub government_revenue: f64,
    pub ropr_pct: Option<f64>,
    pub gap_f1_pct: Option<f64>,
    pub esr_pct: Option<f64>,
}

fn cmd_optimize(args: &OptimizeArgs) -> Result<OptimizeOutcome, CliError> {
    let scenario = load(&args.common.scenario)?;
    run_optimize_pipeline(
        &scenario,
        &args.common.scenario,
        &args.common.out,
        args.common.seed,
        &args.solve,
        args.particles,
        args.iterations,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_optimize_pipeline(
    scenario: &Scenario,
    scenario_path: &Path,
    out: &Path,
    seed: u64,
    flags: &SolveFlags,
    particles: usize,
    iterations: usize,
) -> Result<OptimizeOutcome, CliError> {
    let started = Instant::now();
    ensure_dir(out)?;
    let hash = scenario.content_hash();
    let market_fee = scenario.econ.market_fee_cny_per_tonne;
    let market_fees = FeeSchedule::uniform(scenario, market_fee);
    let mut artifacts = Vec::new();

    // Baseline run at the market fee.
    let m1_cfg = solve_config(flags, derive_seed(seed, 0x6d31, 0, 0), None);
    let m1_instance = assemble_m1(scenario, market_fee);
    let (m1_sol, _m1_stats) =
        solve(&m1_instance, &m1_cfg).map_err(|e| CliError::Other(e.to_string()))?;
    if m1_sol.status == SolveStatus::Infeasible {
        return Err(CliError::Infeasible(
            m1_sol.infeasibility.unwrap_or_else(|| "infeasible".into()),
        ));
    }
    let m1_f1 = pollution_index(&m1_sol, scenario)
        .map_err(|e| CliError::Other(e.to_string()))?
        .total;
    let m1_profit = carrier_profit(&m1_sol, scenario, &market_fees);
    let m1_f2 = -government_revenue(&m1_sol, scenario, &market_fees);

    // Pollution bound over the same feasible region.
    let hpr_cfg = solve_config(flags, derive_seed(seed, 0x6870, 0, 0), None);
    let hpr_instance = assemble_hpr(scenario);
    let (hpr_sol, _hpr_stats) =
        solve(&hpr_instance, &hpr_cfg).map_err(|e| CliError::Other(e.to_string()))?;
    let hpr_f1 = hpr_sol.objective_value;

    // Swarm over fee schedules.
    let mopso = MopsoConfig {
        particles,
        iterations,
        ..MopsoConfig::default()
    };
    let solve_cfg = solve_config(flags, seed, None);
    let run = bilevel::optimize(scenario, &mopso, &solve_cfg, seed)?;

    let best_profit = carrier_profit(&run.best.solution, scenario, &run.best.fees);
    let best_revenue = government_revenue(&run.best.solution, scenario, &run.best.fees);

    artifacts.push(write_file(out, "pareto.csv", &pareto_csv(&run))?);
    artifacts.push(write_file(out, "history.csv", &history_csv(&run))?);
    artifacts.push(write_file(out, "archive_log.csv", &archive_log_csv(&run))?);
    artifacts.push(write_file(
        out,
        "best.json",
        &best_json(scenario, &hash, &run, best_profit)?,
    )?);

    let triple = RunTriple {
        scenario_hash: hash.clone(),
        baseline_objective: m1_sol.objective_value,
        baseline_profit: m1_profit,
        baseline_f1: m1_f1,
        baseline_f2: m1_f2,
        bound_f1: hpr_f1,
        designed_f1: run.best.f1,
        designed_f2: run.best.f2,
        designed_profit: best_profit,
    };
    let (metrics_json, ropr_pct, gap_pct, esr_pct) = match metrics_report(&triple) {
        Ok(report) => (
            serde_json::to_string_pretty(&report).map_err(|e| CliError::Other(e.to_string()))?,
            Some(report.ropr_pct),
            Some(report.gap_f1_pct),
            report.esr_pct,
        ),
        Err(e @ (MetricsError::ZeroBaseline | MetricsError::ZeroBound)) => (
            serde_json::to_string_pretty(&json!({
                "error": e.to_string(),
                "inputs": triple,
            }))
            .map_err(|e| CliError::Other(e.to_string()))?,
            None,
            None,
            None,
        ),
        Err(e) => return Err(CliError::Other(e.to_string())),
    };
    artifacts.push(write_file(out, "metrics.json", &metrics_json)?);

    let mut summary = String::from("metric,value\n");
    let _ = writeln!(summary, "model,optimize-subsidy");
    let _ = writeln!(summary, "best_f1,{}", run.best.f1);
    let _ = writeln!(summary, "best_f2,{}", run.best.f2);
    let _ = writeln!(summary, "carrier_profit_cny,{best_profit}");
    let _ = writeln!(summary, "government_revenue_cny,{best_revenue}");
    let _ = writeln!(summary, "baseline_f1,{m1_f1}");
    let _ = writeln!(summary, "baseline_profit_cny,{m1_profit}");
    let _ = writeln!(summary, "bound_f1,{hpr_f1}");
    if let Some(v) = ropr_pct {
        let _ = writeln!(summary, "ropr_pct,{v:.2}");
    }
    if let Some(v) = gap_pct {
        let _ = writeln!(summary, "gap_f1_pct,{v:.2}");
    }
    if let Some(v) = esr_pct {
        let _ = writeln!(summary, "esr_pct,{v:.2}");
    }
    let _ = writeln!(summary, "iterations_run,{}", run.iterations_run);
    let _ = writeln!(summary, "converged,{}", run.converged);
    let _ = writeln!(summary, "evaluations,{}", run.evaluations);
    let _ = writeln!(summary, "archive_size,{}", run.archive.len());
    let _ = writeln!(
        summary,
        "runtime_secs,{:.3}",
        started.elapsed().as_secs_f64()
    );
    artifacts.push(write_file(out, "summary.csv", &summary)?);

    println!(
        "{}",
        json!({
            "best_f1": run.best.f1,
            "best_f2": run.best.f2,
            "carrier_profit_cny": best_profit,
            "ropr_pct": ropr_pct,
            "gap_f1_pct": gap_pct,
            "esr_pct": esr_pct,
            "iterations_run": run.iterations_run,
            "converged": run.converged,
        })
    );

    write_manifest(
        out,
        "optimize-subsidy",
        Some((scenario_path, &hash)),
        seed,
        json!({
            "gap": flags.gap,
            "time_limit": flags.time_limit,
            "particles": particles,
            "iterations": iterations,
        }),
        started.elapsed().as_secs_f64(),
        artifacts,
    )?;

    Ok(OptimizeOutcome {
        best_f1: run.best.f1,
        best_f2: run.best.f2,
        carrier_profit: best_profit,
        government_revenue: best_revenue,
        ropr_pct,
        gap_f1_pct: gap_pct,
        esr_pct,
    })
}

fn pareto_csv(run: &MopsoRun) -> String {
    let labels = run.best.fees.labels();
    let mut s = labels.join(",");
    s.push_str(",f1,f2\n");
    let mut rows: Vec<&crate::bilevel::ArchiveEntry> = run.archive.entries.iter().collect();
    rows.sort_by(|a, b| a.f1.total_cmp(&b.f1).then(a.f2.total_cmp(&b.f2)));
    for e in rows {
        let fees: Vec<String> = e.position.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{},{},{}", fees.join(","), e.f1, e.f2);
    }
    s
}

fn history_csv(run: &MopsoRun) -> String {
    let mut s = String::from("iteration,best_f1,best_f2,archive_size\n");
    for r in &run.history {
        let _ = writeln!(s, "{},{},{},{}", r.iteration, r.best_f1, r.best_f2, r.archive_size);
    }
    s
}

fn archive_log_csv(run: &MopsoRun) -> String {
    let mut s = String::from("iteration,f1,f2\n");
    for (iter, snapshot) in run.archive_log.iter().enumerate() {
        for (f1, f2) in snapshot {
            let _ = writeln!(s, "{iter},{f1},{f2}");
        }
    }
    s
}

fn best_json(
    scenario: &Scenario,
    hash: &str,
    run: &MopsoRun,
    profit: f64,
) -> Result<String, CliError> {
    let labels = run.best.fees.labels();
    let fees: Vec<serde_json::Value> = labels
        .iter()
        .zip(run.best.position.iter())
        .map(|(label, value)| json!({ "component": label, "value": value }))
        .collect();
    let dispatch = run.best.solution.dispatch_census(scenario);
    let tonnage = run.best.solution.tonnage_census(scenario);
    serde_json::to_string_pretty(&json!({
        "scenario_hash": hash,
        "f1": run.best.f1,
        "f2": run.best.f2,
        "carrier_profit_cny": profit,
        "fees": fees,
        "dispatched_per_fleet": dispatch,
        "tonnage": tonnage,
        "iterations_run": run.iterations_run,
        "converged": run.converged,
    }))
    .map_err(|e| CliError::Other(e.to_string()))
}

fn parse_range(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!(
            "range must be start:stop:step, got `{spec}`"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad number `{p}` in range")))
        })
        .collect::<Result<_, _>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if step <= 0.0 || stop < start {
        return Err(CliError::Config(
            "range needs stop >= start and step > 0".into(),
        ));
    }
    let mut points = Vec::new();
    let mut v = start;
    while v <= stop + 1e-9 {
        points.push((v * 1e9).round() / 1e9);
        v += step;
    }
    if points.is_empty() {
        return Err(CliError::Config("range contains no points".into()));
    }
    Ok(points)
}

fn apply_axis(scenario: &Scenario, axis: SweepAxis, value: f64) -> Result<Scenario, CliError> {
    let mut s = scenario.clone();
    match axis {
        SweepAxis::FeeBounds => {
            s.econ.fee_upper_cny_per_tonne = value;
            s.econ.fee_lower_cny_per_tonne = value - 10.0;
        }
        SweepAxis::ElectricCount => {
            let Some(fleet) = s
                .fleets
                .iter_mut()
                .find(|f| f.kind == crate::scenario::FleetKind::Electric)
            else {
                return Err(CliError::Config(
                    "electric-count sweep needs an electric fleet".into(),
                ));
            };
            if value < 0.0 || value.fract() != 0.0 {
                return Err(CliError::Config(format!(
                    "electric truck count must be a whole number, got {value}"
                )));
            }
            fleet.truck_count = value as u32;
        }
    }
    s.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(s)
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let scenario = load(&args.common.scenario)?;
    ensure_dir(&args.common.out)?;
    let hash = scenario.content_hash();
    let points = parse_range(&args.range)?;
    let jobs = args.jobs.max(1);

    struct PointResult {
        value: f64,
        outcome: Result<OptimizeOutcome, CliError>,
    }

    let mut results: Vec<Option<PointResult>> = Vec::new();
    results.resize_with(points.len(), || None);
    let results_ref = std::sync::Mutex::new(&mut results);
    let next = std::sync::atomic::AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..jobs.min(points.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= points.len() {
                    break;
                }
                let value = points[i];
                let outcome = apply_axis(&scenario, args.axis, value).and_then(|point_scn| {
                    let sub = args.common.out.join(format!("point_{i:03}"));
                    run_optimize_pipeline(
                        &point_scn,
                        &args.common.scenario,
                        &sub,
                        derive_seed(args.common.seed, 0x7377, i as u64, 0),
                        &args.solve,
                        args.particles,
                        args.iterations,
                    )
                });
                let mut guard = results_ref.lock().unwrap();
                guard[i] = Some(PointResult { value, outcome });
            });
        }
    });

    let mut csv = String::from(
        "axis_value,status,f1,government_cost_cny,carrier_profit_cny,gap_f1_pct,ropr_pct\n",
    );
    let mut failures = 0usize;
    for slot in results.iter() {
        let r = slot.as_ref().expect("every point ran");
        match &r.outcome {
            Ok(o) => {
                let _ = writeln!(
                    csv,
                    "{},ok,{},{},{},{},{}",
                    r.value,
                    o.best_f1,
                    o.best_f2,
                    o.carrier_profit,
                    o.gap_f1_pct.map(|v| format!("{v:.2}")).unwrap_or_default(),
                    o.ropr_pct.map(|v| format!("{v:.2}")).unwrap_or_default(),
                );
            }
            Err(e) => {
                failures += 1;
                let _ = writeln!(csv, "{},{},,,,,", r.value, e.kind());
            }
        }
    }
    let artifact = write_file(&args.common.out, "sweep.csv", &csv)?;

    println!(
        "{}",
        json!({
            "points": points.len(),
            "failures": failures,
            "sweep": args.common.out.join(&artifact),
        })
    );

    write_manifest(
        &args.common.out,
        "sweep",
        Some((&args.common.scenario, &hash)),
        args.common.seed,
        json!({
            "axis": args.axis,
            "range": args.range,
            "jobs": args.jobs,
            "gap": args.solve.gap,
            "time_limit": args.solve.time_limit,
            "particles": args.particles,
            "iterations": args.iterations,
        }),
        started.elapsed().as_secs_f64(),
        vec![artifact],
    )
}

fn cmd_replay(args: &ReplayArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.manifest)
        .map_err(|e| CliError::Config(format!("cannot read manifest: {e}")))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad manifest: {e}")))?;
    let manifest_dir = args
        .manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let out = args.out.clone().unwrap_or(manifest_dir);

    if let (Some(path), Some(recorded_hash)) = (&manifest.scenario_path, &manifest.scenario_hash) {
        let scenario = load(Path::new(path))?;
        let hash = scenario.content_hash();
        if &hash != recorded_hash {
            return Err(CliError::Config(format!(
                "scenario content changed since the recorded run: {hash} != {recorded_hash}"
            )));
        }
    }

    let cfg = &manifest.config;
    let get_f64 = |key: &str, default: f64| cfg.get(key).and_then(|v| v.as_f64()).unwrap_or(default);
    let get_u64 = |key: &str, default: u64| cfg.get(key).and_then(|v| v.as_u64()).unwrap_or(default);
    let scenario_path = manifest
        .scenario_path
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_default();

    match manifest.command.as_str() {
        "generate" => cmd_generate(&GenerateArgs {
            seed: manifest.seed,
            production: get_u64("production", 17) as usize,
            backfill: get_u64("backfill", 10) as usize,
            processing: get_u64("processing", 3) as usize,
            bbox_km: get_f64("bbox_km", 20.0),
            out,
        }),
        "network" => cmd_network(&NetworkArgs {
            scenario: scenario_path,
            out,
            edges: cfg
                .get("edges")
                .and_then(|v| v.as_str())
                .map(|s| s.to_string()),
        }),
        "solve-carrier" | "solve-hpr" => {
            let solve_args = SolveArgs {
                common: CommonArgs {
                    scenario: scenario_path,
                    seed: manifest.seed,
                    out,
                },
                solve: SolveFlags {
                    gap: get_f64("gap", 0.0),
                    time_limit: get_f64("time_limit", 600.0),
                },
                export_lp: cfg
                    .get("export_lp")
                    .and_then(|v| v.as_str())
                    .map(|s| s.to_string()),
                dump_network: cfg
                    .get("dump_network")
                    .and_then(|v| v.as_str())
                    .map(|s| s.to_string()),
                progress: cfg
                    .get("progress")
                    .and_then(|v| v.as_bool())
                    .unwrap_or(false),
            };
            let kind = if manifest.command == "solve-carrier" {
                SolveKind::Carrier
            } else {
                SolveKind::Hpr
            };
            cmd_solve(&solve_args, kind)
        }
        "optimize-subsidy" => cmd_optimize(&OptimizeArgs {
            common: CommonArgs {
                scenario: scenario_path,
                seed: manifest.seed,
                out,
            },
            solve: SolveFlags {
                gap: get_f64("gap", 0.0),
                time_limit: get_f64("time_limit", 600.0),
            },
            particles: get_u64("particles", 40) as usize,
            iterations: get_u64("iterations", 20) as usize,
        })
        .map(|_| ()),
        "sweep" => {
            let axis = match cfg.get("axis").and_then(|v| v.as_str()) {
                Some("fee_bounds") => SweepAxis::FeeBounds,
                Some("electric_count") => SweepAxis::ElectricCount,
                other => {
                    return Err(CliError::Config(format!(
                        "manifest has unknown sweep axis {other:?}"
                    )))
                }
            };
            cmd_sweep(&SweepArgs {
                common: CommonArgs {
                    scenario: scenario_path,
                    seed: manifest.seed,
                    out,
                },
                solve: SolveFlags {
                    gap: get_f64("gap", 0.0),
                    time_limit: get_f64("time_limit", 600.0),
                },
                particles: get_u64("particles", 8) as usize,
                iterations: get_u64("iterations", 10) as usize,
                axis,
                range: cfg
                    .get("range")
                    .and_then(|v| v.as_str())
                    .unwrap_or_default()
                    .to_string(),
                jobs: get_u64("jobs", 1) as usize,
            })
        }
        other => Err(CliError::Config(format!(
            "manifest names unknown command `{other}`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("3:7:0.5").unwrap().len(), 9);
        assert_eq!(parse_range("10:50:10").unwrap(), vec![10.0, 20.0, 30.0, 40.0, 50.0]);
        assert!(parse_range("5:1:1").is_err());
        assert!(parse_range("1:5:0").is_err());
        assert!(parse_range("nonsense").is_err());
    }

    #[test]
    fn exit_codes_match_contract() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 3);
        assert_eq!(CliError::Infeasible("x".into()).exit_code(), 2);
        assert_eq!(CliError::NoIncumbent.exit_code(), 4);
        assert_eq!(CliError::Other("x".into()).exit_code(), 1);
    }
}
