//! Command-line behavior: artifacts, exit codes, replay, sweeps.

mod common;

use std::path::{Path, PathBuf};

use common::{electric_flip_scenario, forced_route_scenario, relay_scenario};
use cwopt::cli::main_with_args;
use cwopt::scenario::Scenario;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["cwopt"];
    argv.extend_from_slice(args);
    main_with_args(argv)
}

fn write_scenario(dir: &Path, scenario: &Scenario) -> PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(scenario).unwrap()).unwrap();
    path
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("missing {name}: {e}"))
}

fn summary_value(summary: &str, key: &str) -> f64 {
    summary
        .lines()
        .find_map(|line| line.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("summary lacks {key}"))
        .parse()
        .unwrap()
}

#[test]
fn generate_writes_valid_scenario_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let code = run(&[
            "generate",
            "--seed",
            "7",
            "--production",
            "2",
            "--backfill",
            "1",
            "--processing",
            "1",
            "--bbox-km",
            "6",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    let a = read(&out_a, "scenario.json");
    let b = read(&out_b, "scenario.json");
    assert_eq!(a, b, "same seed must give byte-identical scenarios");
    cwopt::scenario::scenario_from_json(&a).unwrap();
}

#[test]
fn solve_carrier_writes_consistent_summary_and_flows() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = relay_scenario();
    let path = write_scenario(tmp.path(), &scenario);
    let out = tmp.path().join("run");
    let code = run(&[
        "solve-carrier",
        "--scenario",
        path.to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
        "--export-lp",
        "model.lp",
        "--dump-network",
        "edges.csv",
        "--progress",
    ]);
    assert_eq!(code, 0);

    let summary = read(&out, "summary.csv");
    assert!(summary.starts_with("metric,value\n"), "header row mandatory");
    let s2p = summary_value(&summary, "tonnes_production_to_processing");
    let s2d = summary_value(&summary, "tonnes_production_to_backfill");
    let p2d = summary_value(&summary, "tonnes_processing_to_backfill");
    let total = summary_value(&summary, "tonnes_total");
    assert!(
        (s2p + s2d + p2d - total).abs() < 1e-9,
        "leg tonnages must sum to the total"
    );
    let revenue = summary_value(&summary, "government_revenue_cny");
    assert!(
        (revenue - 5.0 * s2p).abs() < 1e-9,
        "revenue must equal fee times treated tonnes"
    );

    let flows = read(&out, "flows.csv");
    assert!(flows.starts_with("from,to,fleet,waste_type,depart,arrive,class,flow\n"));
    assert!(flows.lines().count() > 1);

    assert!(read(&out, "model.lp").contains("Minimize"));
    assert!(read(&out, "edges.csv").starts_with("from_site,from_t,to_site,to_t,class"));
    assert!(read(&out, "progress.csv").starts_with("time,incumbent,bound,gap,nodes"));
    let manifest = read(&out, "manifest.json");
    assert!(manifest.contains("solve-carrier"));
}

#[test]
fn zero_task_summary_is_all_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let mut scenario = relay_scenario();
    for site in &mut scenario.sites {
        site.supply_tonnes = 0.0;
        site.demand_tonnes = 0.0;
    }
    let path = write_scenario(tmp.path(), &scenario);
    let out = tmp.path().join("run");
    let code = run(&[
        "solve-carrier",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let summary = read(&out, "summary.csv");
    assert_eq!(summary_value(&summary, "objective"), 0.0);
    assert_eq!(summary_value(&summary, "tonnes_total"), 0.0);
    assert_eq!(summary_value(&summary, "dispatched_trucks_total"), 0.0);
}

#[test]
fn infeasible_scenario_exits_2_missing_file_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let mut scenario = forced_route_scenario();
    for site in &mut scenario.sites {
        if site.demand_tonnes > 0.0 {
            site.demand_tonnes = 6.0 * 15.5;
        }
        if site.supply_tonnes > 0.0 {
            site.supply_tonnes = 6.0 * 15.5;
        }
    }
    let path = write_scenario(tmp.path(), &scenario);
    let out = tmp.path().join("run");
    let code = run(&[
        "solve-carrier",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "infeasible must exit 2");
    let summary = read(&out, "summary.csv");
    assert!(summary.contains("infeasible"));

    let code = run(&[
        "solve-carrier",
        "--scenario",
        tmp.path().join("nope.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "unreadable scenario must exit 3");

    // Invalid scenario content also exits 3.
    let bad = tmp.path().join("bad.json");
    let mut broken = forced_route_scenario();
    broken.econ.fee_lower_cny_per_tonne = 99.0;
    std::fs::write(&bad, serde_json::to_string(&broken).unwrap()).unwrap();
    let code = run(&[
        "solve-carrier",
        "--scenario",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 3);
}

#[test]
fn solve_hpr_reports_lower_pollution_than_carrier_run() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = electric_flip_scenario();
    let path = write_scenario(tmp.path(), &scenario);
    let carrier_out = tmp.path().join("carrier");
    let hpr_out = tmp.path().join("hpr");
    assert_eq!(
        run(&[
            "solve-carrier",
            "--scenario",
            path.to_str().unwrap(),
            "--out",
            carrier_out.to_str().unwrap(),
        ]),
        0
    );
    assert_eq!(
        run(&[
            "solve-hpr",
            "--scenario",
            path.to_str().unwrap(),
            "--out",
            hpr_out.to_str().unwrap(),
        ]),
        0
    );
    let carrier = read(&carrier_out, "summary.csv");
    let hpr = read(&hpr_out, "summary.csv");
    let f1_carrier = summary_value(&carrier, "pollution_index");
    let f1_hpr = summary_value(&hpr, "pollution_index");
    assert!(f1_hpr <= f1_carrier);
    // Coordinated scheduling costs the carrier profit.
    let profit_carrier = summary_value(&carrier, "carrier_profit_cny");
    let profit_hpr = summary_value(&hpr, "carrier_profit_cny");
    assert!(profit_hpr <= profit_carrier + 1e-9);
}

#[test]
fn optimize_subsidy_artifacts_and_replay_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = relay_scenario();
    let path = write_scenario(tmp.path(), &scenario);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let code = run(&[
            "optimize-subsidy",
            "--scenario",
            path.to_str().unwrap(),
            "--seed",
            "9",
            "--particles",
            "4",
            "--iterations",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    for name in ["best.json", "pareto.csv", "history.csv", "metrics.json"] {
        assert_eq!(
            read(&out_a, name),
            read(&out_b, name),
            "{name} must be reproducible"
        );
    }

    // Replay from the manifest into a third directory.
    let out_c = tmp.path().join("c");
    let code = run(&[
        "replay",
        "--manifest",
        out_a.join("manifest.json").to_str().unwrap(),
        "--out",
        out_c.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(read(&out_a, "best.json"), read(&out_c, "best.json"));
}

#[test]
fn sweep_writes_one_row_per_point_and_rejects_empty_ranges() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = relay_scenario();
    let path = write_scenario(tmp.path(), &scenario);
    let out = tmp.path().join("sweep");
    let code = run(&[
        "sweep",
        "--scenario",
        path.to_str().unwrap(),
        "--axis",
        "fee-bounds",
        "--range",
        "5:7:1",
        "--particles",
        "3",
        "--iterations",
        "2",
        "--jobs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let csv = read(&out, "sweep.csv");
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "axis_value,status,f1,government_cost_cny,carrier_profit_cny,gap_f1_pct,ropr_pct"
    );
    assert_eq!(lines.count(), 3, "one row per grid point");
    assert!(out.join("point_000").join("best.json").exists());

    let code = run(&[
        "sweep",
        "--scenario",
        path.to_str().unwrap(),
        "--axis",
        "fee-bounds",
        "--range",
        "7:5:1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "empty range is a usage error");
}

#[test]
fn electric_count_sweep_shows_nonincreasing_pollution() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = electric_flip_scenario();
    let path = write_scenario(tmp.path(), &scenario);
    let out = tmp.path().join("sweep");
    let code = run(&[
        "sweep",
        "--scenario",
        path.to_str().unwrap(),
        "--axis",
        "electric-count",
        "--range",
        "0:2:1",
        "--particles",
        "6",
        "--iterations",
        "6",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert_eq!(code, 0);
    let csv = read(&out, "sweep.csv");
    let f1s: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|line| line.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(f1s.len(), 3);
    for pair in f1s.windows(2) {
        assert!(
            pair[1] <= pair[0] + 1e-6,
            "pollution should not rise with more electric trucks: {f1s:?}"
        );
    }
}
