//! Shared test support: hand-built fixtures and an exhaustive schedule
//! enumeration oracle.
//!
//! The oracle is deliberately independent of the production code path: it
//! re-derives travel times, movement rules, service dwell, capacity events,
//! window accounting, and both objectives from the scenario data alone, and
//! finds the optimum by enumerating complete truck schedules. It is only
//! viable for a couple of trucks and a short horizon, which is exactly the
//! regime the equivalence tests run in.

use cwopt::model::{strict_window_upper_tonnes, FeeSchedule};
use cwopt::scenario::{
    DistanceMatrix, DistanceUnit, EconParams, EmissionParams, Fleet, FleetKind, Horizon,
    Scenario, Site, SiteKind, WasteType,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Meters per interval at the reference speed (30 km/h, 10-minute slots).
pub const INTERVAL_M: f64 = 5000.0;

pub fn reference_horizon(intervals: u32) -> Horizon {
    Horizon {
        intervals,
        interval_minutes: 10.0,
        speed_mps: 30.0 / 3.6,
    }
}

/// Distance that rounds up to exactly `r` travel intervals.
pub fn interval_distance(r: u32) -> f64 {
    assert!(r >= 1);
    r as f64 * INTERVAL_M - 500.0
}

pub fn diesel_fleet(id: usize, trucks: u32) -> Fleet {
    Fleet {
        id,
        kind: FleetKind::Diesel,
        truck_count: trucks,
        rated_load_kg: 15_500.0,
        unladen_weight_kg: 15_500.0,
        fixed_cost_cny: 750.0,
        travel_cost_cny_per_interval: 19.5,
    }
}

pub fn electric_fleet(id: usize, trucks: u32) -> Fleet {
    Fleet {
        id,
        kind: FleetKind::Electric,
        truck_count: trucks,
        rated_load_kg: 15_500.0,
        unladen_weight_kg: 15_500.0,
        fixed_cost_cny: 550.0,
        travel_cost_cny_per_interval: 9.5,
    }
}

pub fn default_econ() -> EconParams {
    EconParams {
        transport_price_cny_per_tonne: 25.0,
        market_fee_cny_per_tonne: 5.0,
        fee_lower_cny_per_tonne: -5.0,
        fee_upper_cny_per_tonne: 7.0,
        epsilon2: 0.05,
    }
}

pub struct SiteSpec {
    pub kind: SiteKind,
    pub capacity: u32,
    /// Supply, demand, or pollution factor depending on kind.
    pub amount: f64,
}

pub fn site(kind: SiteKind, capacity: u32, amount: f64) -> SiteSpec {
    SiteSpec {
        kind,
        capacity,
        amount,
    }
}

/// Assemble a scenario from site specs and a travel-time matrix given in
/// whole intervals.
pub fn build_scenario(
    specs: &[SiteSpec],
    travel_intervals: &[&[u32]],
    fleets: Vec<Fleet>,
    horizon_intervals: u32,
    econ: EconParams,
) -> Scenario {
    let n = specs.len();
    let sites: Vec<Site> = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| Site {
            id: i,
            kind: spec.kind,
            service_capacity: spec.capacity,
            supply_tonnes: if spec.kind == SiteKind::Production {
                spec.amount
            } else {
                0.0
            },
            demand_tonnes: if spec.kind == SiteKind::Backfill {
                spec.amount
            } else {
                0.0
            },
            pollution_factor: if spec.kind == SiteKind::Processing {
                spec.amount
            } else {
                0.0
            },
        })
        .collect();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        assert_eq!(travel_intervals[i].len(), n);
        for j in 0..n {
            if i != j {
                matrix[i][j] = interval_distance(travel_intervals[i][j]);
            }
        }
    }
    let scenario = Scenario {
        horizon: reference_horizon(horizon_intervals),
        sites,
        distances: DistanceMatrix {
            unit: DistanceUnit::Meters,
            matrix,
        },
        fleets,
        econ,
        emissions: EmissionParams::default(),
        waste_types: Vec::new(),
    };
    scenario.validate().expect("fixture must be valid");
    scenario
}

/// Depot, production, backfill; one diesel truck; the only feasible work is
/// a single loaded trip production -> backfill.
pub fn forced_route_scenario() -> Scenario {
    build_scenario(
        &[
            site(SiteKind::Depot, 0, 0.0),
            site(SiteKind::Production, 2, 15.5),
            site(SiteKind::Backfill, 2, 15.5),
        ],
        &[
            &[0, 1, 2],
            &[1, 0, 1],
            &[2, 1, 0],
        ],
        vec![diesel_fleet(0, 1)],
        8,
        default_econ(),
    )
}

/// Adds a facility between production and backfill: relaying the load
/// through treatment and hauling facility stock onward beats the direct
/// trip, which makes a good trap for sloppy accounting.
pub fn relay_scenario() -> Scenario {
    build_scenario(
        &[
            site(SiteKind::Depot, 0, 0.0),
            site(SiteKind::Processing, 2, 0.2),
            site(SiteKind::Production, 2, 15.5),
            site(SiteKind::Backfill, 2, 15.5),
        ],
        &[
            &[0, 1, 1, 2],
            &[1, 0, 1, 1],
            &[1, 1, 0, 1],
            &[2, 1, 1, 0],
        ],
        vec![diesel_fleet(0, 1)],
        8,
        default_econ(),
    )
}

/// Two identical facilities at equal distance from one production site: two
/// symmetric optimal schedules.
pub fn twin_facility_scenario() -> Scenario {
    build_scenario(
        &[
            site(SiteKind::Depot, 0, 0.0),
            site(SiteKind::Processing, 2, 0.2),
            site(SiteKind::Processing, 2, 0.2),
            site(SiteKind::Production, 2, 15.5),
        ],
        &[
            &[0, 2, 2, 1],
            &[2, 0, 2, 1],
            &[2, 2, 0, 1],
            &[1, 1, 1, 0],
        ],
        vec![diesel_fleet(0, 1)],
        8,
        default_econ(),
    )
}

/// Diesel is the profitable choice without subsidies, while an electric
/// fleet and a cleaner (but farther) facility could cut pollution sharply.
/// Fee bounds are wide enough for subsidies to flip the choice.
pub fn electric_flip_scenario() -> Scenario {
    let mut econ = default_econ();
    econ.fee_lower_cny_per_tonne = -40.0;
    econ.fee_upper_cny_per_tonne = 7.0;
    let mut electric = electric_fleet(0, 2);
    // Pricey to own, cheap to run: parked without a subsidy.
    electric.fixed_cost_cny = 1_500.0;
    build_scenario(
        &[
            site(SiteKind::Depot, 0, 0.0),
            site(SiteKind::Processing, 2, 0.6),
            site(SiteKind::Processing, 2, 0.1),
            site(SiteKind::Production, 2, 46.5),
        ],
        &[
            &[0, 1, 2, 1],
            &[1, 0, 2, 1],
            &[2, 2, 0, 2],
            &[1, 1, 2, 0],
        ],
        vec![electric, diesel_fleet(1, 2)],
        12,
        econ,
    )
}

/// Ten sites, two fleets of ten trucks, two dozen intervals. Electric
/// trucks carry a fixed-cost premium so the unsubsidized schedule is all
/// diesel, and the fee floor is deep enough to flip it.
pub fn medium_scenario() -> Scenario {
    let mut econ = default_econ();
    econ.fee_lower_cny_per_tonne = -40.0;
    econ.fee_upper_cny_per_tonne = 7.0;
    let mut electric = electric_fleet(0, 10);
    electric.fixed_cost_cny = 1_200.0;
    build_scenario(
        &[
            site(SiteKind::Depot, 0, 0.0),
            site(SiteKind::Processing, 3, 0.2),
            site(SiteKind::Processing, 3, 0.6),
            site(SiteKind::Production, 2, 310.0),
            site(SiteKind::Production, 2, 310.0),
            site(SiteKind::Production, 2, 310.0),
            site(SiteKind::Production, 2, 310.0),
            site(SiteKind::Backfill, 3, 31.0),
            site(SiteKind::Backfill, 3, 31.0),
            site(SiteKind::Backfill, 3, 31.0),
        ],
        &[
            &[0, 2, 2, 1, 1, 2, 2, 2, 2, 3],
            &[2, 0, 2, 1, 2, 2, 2, 1, 2, 2],
            &[2, 2, 0, 2, 2, 1, 2, 2, 1, 2],
            &[1, 1, 2, 0, 1, 2, 2, 1, 2, 2],
            &[1, 2, 2, 1, 0, 1, 2, 1, 1, 2],
            &[2, 2, 1, 2, 1, 0, 1, 2, 1, 2],
            &[2, 2, 2, 2, 2, 1, 0, 2, 1, 1],
            &[2, 1, 2, 1, 1, 2, 2, 0, 1, 2],
            &[2, 2, 1, 2, 1, 1, 1, 1, 0, 1],
            &[3, 2, 2, 2, 2, 2, 1, 2, 1, 0],
        ],
        vec![electric, diesel_fleet(1, 10)],
        24,
        econ,
    )
}

/// Random tiny instance for oracle-equivalence runs: at most three
/// non-depot sites, at most two trucks, a handful of intervals. Supplies
/// and demands are whole truckloads so the slack windows always admit an
/// integer answer. Returns `None` when the draw has no feasible schedule.
pub fn random_tiny_scenario(seed: u64) -> Option<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.random_range(6..=8);
    let load = 15.5;

    // Always one production site; the other two slots draw from the
    // remaining roles.
    let mut specs: Vec<SiteSpec> = vec![site(SiteKind::Depot, 0, 0.0)];
    let qs_loads = rng.random_range(1..=2) as f64;
    let extra_roles = [SiteKind::Processing, SiteKind::Backfill];
    let mut kinds = vec![SiteKind::Production];
    kinds.push(extra_roles[rng.random_range(0..2)]);
    if rng.random_range(0..3) > 0 {
        kinds.push(extra_roles[rng.random_range(0..2)]);
    }
    let mut has_sink = false;
    for kind in &kinds {
        match kind {
            SiteKind::Production => specs.push(site(
                SiteKind::Production,
                rng.random_range(1..=2),
                qs_loads * load,
            )),
            SiteKind::Processing => {
                has_sink = true;
                specs.push(site(
                    SiteKind::Processing,
                    rng.random_range(1..=2),
                    [0.2, 0.4, 0.6][rng.random_range(0..3)],
                ));
            }
            SiteKind::Backfill => {
                has_sink = true;
                let qd_loads = rng.random_range(1..=2) as f64;
                specs.push(site(
                    SiteKind::Backfill,
                    rng.random_range(1..=2),
                    qd_loads * load,
                ));
            }
            SiteKind::Depot => unreachable!(),
        }
    }
    if !has_sink {
        return None;
    }

    let n = specs.len();
    let mut tri = vec![vec![0u32; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let r = rng.random_range(1..=2);
            tri[i][j] = r;
            tri[j][i] = r;
        }
    }
    let rows: Vec<&[u32]> = tri.iter().map(|r| r.as_slice()).collect();

    let fleets = match rng.random_range(0..3) {
        0 => vec![diesel_fleet(0, 2)],
        1 => vec![electric_fleet(0, 1), diesel_fleet(1, 1)],
        _ => vec![diesel_fleet(0, 1), electric_fleet(1, 1)],
    };

    let scenario = build_scenario(&specs, &rows, fleets, horizon, default_econ());
    let market = FeeSchedule::uniform(&scenario, scenario.econ.market_fee_cny_per_tonne);
    oracle_best(&scenario, OracleObjective::Profit(&market)).map(|_| scenario)
}

pub fn with_waste_types(mut scenario: Scenario, count: u16) -> Scenario {
    scenario.waste_types = (1..=count)
        .map(|id| WasteType {
            id,
            name: format!("type-{id}"),
        })
        .collect();
    scenario
}

pub fn random_fee_schedule(scenario: &Scenario, seed: u64) -> FeeSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = scenario.econ.fee_lower_cny_per_tonne;
    let hi = scenario.econ.fee_upper_cny_per_tonne;
    let dim = FeeSchedule::dimension(scenario);
    let values: Vec<f64> = (0..dim)
        .map(|_| (rng.random_range(lo..=hi) * 1e5).trunc() / 1e5)
        .collect();
    FeeSchedule::from_values(scenario, values).expect("shape matches")
}

// ---------------------------------------------------------------------
// Enumeration oracle
// ---------------------------------------------------------------------

pub enum OracleObjective<'a> {
    /// Minimize costs minus revenue under a fee schedule.
    Profit(&'a FeeSchedule),
    /// Minimize transport plus facility pollution.
    Pollution,
}

#[derive(Clone, Debug)]
struct Leg {
    from: usize,
    to: usize,
    depart: u32,
    arrive: u32,
    loaded: bool,
    wtype: u16,
}

#[derive(Clone, Debug)]
struct Route {
    cost: f64,
    /// (site, period) service-capacity charges.
    occupancy: Vec<(usize, u32)>,
    /// Kilograms hauled out of each production site.
    hauled_kg: Vec<(usize, f64)>,
    /// Kilograms delivered into each backfill site.
    delivered_kg: Vec<(usize, f64)>,
}

fn oracle_travel(scenario: &Scenario, from: usize, to: usize) -> u32 {
    let d = scenario.distances.meters(from, to);
    if d <= 0.0 {
        return 0;
    }
    let minutes = d / scenario.horizon.speed_mps / 60.0;
    ((minutes / scenario.horizon.interval_minutes) - 1e-9)
        .ceil()
        .max(1.0) as u32
}

/// Loaded and empty moves allowed out of a site, by destination kind.
fn oracle_moves(from_kind: SiteKind, to_kind: SiteKind) -> Option<bool> {
    match (from_kind, to_kind) {
        (SiteKind::Production, SiteKind::Backfill) => Some(true),
        (SiteKind::Production, SiteKind::Processing) => Some(true),
        (SiteKind::Processing, SiteKind::Backfill) => Some(true),
        (SiteKind::Depot, SiteKind::Processing) => Some(false),
        (SiteKind::Depot, SiteKind::Production) => Some(false),
        (SiteKind::Processing, SiteKind::Depot) => Some(false),
        (SiteKind::Backfill, SiteKind::Depot) => Some(false),
        (SiteKind::Backfill, SiteKind::Processing) => Some(false),
        (SiteKind::Backfill, SiteKind::Production) => Some(false),
        (SiteKind::Processing, SiteKind::Production) => Some(false),
        _ => None,
    }
}

/// Independent pollution of one leg: closed-form fuel burn for diesel plus
/// the facility factor for loaded deliveries to processing.
fn leg_pollution(scenario: &Scenario, leg: &Leg, fleet: &Fleet) -> f64 {
    let mut total = 0.0;
    let depot = scenario
        .sites
        .iter()
        .position(|s| s.kind == SiteKind::Depot)
        .unwrap();
    if leg.from != depot && leg.to != depot && fleet.kind == FleetKind::Diesel {
        let em = &scenario.emissions;
        let u = scenario.horizon.speed_mps;
        let d = scenario.distances.meters(leg.from, leg.to);
        let lambda = em.fuel_air_ratio / (em.heating_value_kj_g * em.fuel_conversion_g_per_l);
        let gamma = 1.0 / (1000.0 * em.drivetrain_efficiency * em.engine_efficiency);
        let rad = em.road_angle_deg.to_radians();
        let alpha = em.accel_mps2
            + em.gravity_mps2 * rad.sin()
            + em.gravity_mps2 * em.rolling_coeff * rad.cos();
        let beta = 0.5 * em.drag_coeff * em.air_density_kg_m3 * em.frontal_area_m2;
        let knv = em.engine_friction_kj_rev_l * em.engine_speed_rps * em.displacement_l;
        let mass = fleet.unladen_weight_kg + if leg.loaded { fleet.rated_load_kg } else { 0.0 };
        total += lambda * (knv + mass * gamma * alpha * u + beta * gamma * u.powi(3)) * d / u;
    }
    if leg.loaded
        && scenario.sites[leg.from].kind == SiteKind::Production
        && scenario.sites[leg.to].kind == SiteKind::Processing
    {
        total += scenario.sites[leg.to].pollution_factor * fleet.rated_load_kg / 1000.0;
    }
    total
}

fn leg_profit_cost(
    scenario: &Scenario,
    leg: &Leg,
    fleet: &Fleet,
    fees: &FeeSchedule,
    first: bool,
) -> f64 {
    let depot = scenario
        .sites
        .iter()
        .position(|s| s.kind == SiteKind::Depot)
        .unwrap();
    let mut cost = 0.0;
    if first {
        cost += fleet.fixed_cost_cny;
    }
    if leg.from != depot && leg.to != depot {
        cost += fleet.travel_cost_cny_per_interval * (leg.arrive - leg.depart) as f64;
    }
    if leg.loaded {
        let tonnes = fleet.rated_load_kg / 1000.0;
        let c2 = scenario.econ.transport_price_cny_per_tonne;
        match scenario.sites[leg.to].kind {
            SiteKind::Backfill => cost -= c2 * tonnes,
            SiteKind::Processing => {
                let wtype = if scenario.waste_types.is_empty() {
                    None
                } else {
                    Some(leg.wtype)
                };
                cost -= (c2 - fees.value_for_site(leg.to, fleet.id, wtype)) * tonnes;
            }
            _ => panic!("loaded legs end at backfill or processing"),
        }
    }
    cost
}

fn enumerate_routes(
    scenario: &Scenario,
    fleet: &Fleet,
    objective: &OracleObjective<'_>,
) -> Vec<Route> {
    let n = scenario.sites.len();
    let t_max = scenario.horizon.intervals;
    let depot = scenario
        .sites
        .iter()
        .position(|s| s.kind == SiteKind::Depot)
        .unwrap();

    // Minimum intervals needed to get from a site back to the depot,
    // counting the mandatory service interval before each departure.
    let min_return: Vec<Option<u32>> = (0..n)
        .map(|i| {
            let kind = scenario.sites[i].kind;
            match kind {
                SiteKind::Depot => Some(0),
                SiteKind::Processing | SiteKind::Backfill => Some(oracle_travel(scenario, i, depot)),
                SiteKind::Production => {
                    let mut best: Option<u32> = None;
                    for k in 0..n {
                        let kk = scenario.sites[k].kind;
                        if kk == SiteKind::Processing || kk == SiteKind::Backfill {
                            let via = oracle_travel(scenario, i, k)
                                + 1
                                + oracle_travel(scenario, k, depot);
                            best = Some(best.map_or(via, |b| b.min(via)));
                        }
                    }
                    best
                }
            }
        })
        .collect();

    let type_ids: Vec<u16> = if scenario.waste_types.is_empty() {
        vec![0]
    } else {
        scenario.waste_types.iter().map(|t| t.id).collect()
    };

    let mut routes = Vec::new();

    struct Frame<'s, 'o> {
        scenario: &'s Scenario,
        fleet: &'s Fleet,
        objective: &'s OracleObjective<'o>,
        depot: usize,
        t_max: u32,
        min_return: Vec<Option<u32>>,
        type_ids: Vec<u16>,
    }

    #[allow(clippy::too_many_arguments)]
    fn explore(
        f: &Frame<'_, '_>,
        site: usize,
        arrival: u32,
        cost: f64,
        occupancy: &mut Vec<(usize, u32)>,
        hauled: &mut Vec<(usize, f64)>,
        delivered: &mut Vec<(usize, f64)>,
        routes: &mut Vec<Route>,
    ) {
        let Some(ret) = f.min_return[site] else {
            return;
        };
        for depart in (arrival + 1)..=f.t_max {
            if depart + ret > f.t_max {
                break;
            }
            // Arrival plus each waited interval charges the site.
            let stay: Vec<(usize, u32)> = (arrival..depart).map(|p| (site, p)).collect();
            for to in 0..f.scenario.sites.len() {
                if to == site {
                    continue;
                }
                let Some(loaded) =
                    oracle_moves(f.scenario.sites[site].kind, f.scenario.sites[to].kind)
                else {
                    continue;
                };
                let r = oracle_travel(f.scenario, site, to);
                let arrive = depart + r;
                if arrive > f.t_max {
                    continue;
                }
                let types: &[u16] = if loaded { &f.type_ids } else { &[0] };
                for &wtype in types {
                    let leg = Leg {
                        from: site,
                        to,
                        depart,
                        arrive,
                        loaded,
                        wtype,
                    };
                    let leg_cost = match f.objective {
                        OracleObjective::Profit(fees) => {
                            leg_profit_cost(f.scenario, &leg, f.fleet, fees, false)
                        }
                        OracleObjective::Pollution => leg_pollution(f.scenario, &leg, f.fleet),
                    };
                    let kg = f.fleet.rated_load_kg;
                    let from_kind = f.scenario.sites[site].kind;
                    let to_kind = f.scenario.sites[to].kind;
                    occupancy.extend_from_slice(&stay);
                    if loaded && from_kind == SiteKind::Production {
                        hauled.push((site, kg));
                    }
                    if loaded && to_kind == SiteKind::Backfill {
                        delivered.push((to, kg));
                    }
                    if to == f.depot {
                        routes.push(Route {
                            cost: cost + leg_cost,
                            occupancy: occupancy.clone(),
                            hauled_kg: hauled.clone(),
                            delivered_kg: delivered.clone(),
                        });
                    } else {
                        explore(
                            f,
                            to,
                            arrive,
                            cost + leg_cost,
                            occupancy,
                            hauled,
                            delivered,
                            routes,
                        );
                    }
                    occupancy.truncate(occupancy.len() - stay.len());
                    if loaded && from_kind == SiteKind::Production {
                        hauled.pop();
                    }
                    if loaded && to_kind == SiteKind::Backfill {
                        delivered.pop();
                    }
                }
            }
        }
    }

    let frame = Frame {
        scenario,
        fleet,
        objective,
        depot,
        t_max,
        min_return,
        type_ids,
    };

    for first_stop in 0..n {
        let kind = scenario.sites[first_stop].kind;
        if kind != SiteKind::Processing && kind != SiteKind::Production {
            continue;
        }
        let r = oracle_travel(scenario, depot, first_stop);
        for t0 in 0..=t_max.saturating_sub(r) {
            let leg = Leg {
                from: depot,
                to: first_stop,
                depart: t0,
                arrive: t0 + r,
                loaded: false,
                wtype: 0,
            };
            let leg_cost = match &objective {
                OracleObjective::Profit(fees) => leg_profit_cost(scenario, &leg, fleet, fees, true),
                OracleObjective::Pollution => leg_pollution(scenario, &leg, fleet),
            };
            let mut occupancy = Vec::new();
            let mut hauled = Vec::new();
            let mut delivered = Vec::new();
            explore(
                &frame,
                first_stop,
                t0 + r,
                leg_cost,
                &mut occupancy,
                &mut hauled,
                &mut delivered,
                &mut routes,
            );
        }
    }
    assert!(routes.len() < 500_000, "oracle fixture too large");
    routes
}

/// Scratch diagnostic: print every enumerated route of one fleet.
#[allow(dead_code)]
pub fn debug_routes(scenario: &Scenario, fleet: usize, objective: &OracleObjective<'_>) {
    let routes = enumerate_routes(scenario, &scenario.fleets[fleet], objective);
    eprintln!("fleet {fleet}: {} routes", routes.len());
    let mut sorted: Vec<&Route> = routes.iter().collect();
    sorted.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    for r in sorted.iter().take(10) {
        eprintln!(
            "  cost {:.2} occupancy {:?} hauled {:?} delivered {:?}",
            r.cost, r.occupancy, r.hauled_kg, r.delivered_kg
        );
    }
}

/// Exhaustive optimum over complete schedules: every truck either parks or
/// runs one of its enumerated routes, subject to joint capacity and the
/// supply/demand windows. `None` means no feasible schedule exists.
pub fn oracle_best(scenario: &Scenario, objective: OracleObjective<'_>) -> Option<f64> {
    let mut truck_fleets = Vec::new();
    for (v, fleet) in scenario.fleets.iter().enumerate() {
        for _ in 0..fleet.truck_count {
            truck_fleets.push(v);
        }
    }
    let routes_per_fleet: Vec<Vec<Route>> = scenario
        .fleets
        .iter()
        .map(|f| enumerate_routes(scenario, f, &objective))
        .collect();

    let n = scenario.sites.len();
    let t_max = scenario.horizon.intervals as usize;
    let production = scenario.production_sites();
    let backfill = scenario.backfill_sites();
    let supply_hi_kg: Vec<f64> = production
        .iter()
        .map(|&i| {
            strict_window_upper_tonnes(scenario.sites[i].supply_tonnes, scenario.econ.epsilon2)
                * 1000.0
        })
        .collect();
    let demand_hi_kg: Vec<f64> = backfill
        .iter()
        .map(|&j| {
            strict_window_upper_tonnes(scenario.sites[j].demand_tonnes, scenario.econ.epsilon2)
                * 1000.0
        })
        .collect();

    struct Search<'s> {
        scenario: &'s Scenario,
        truck_fleets: Vec<usize>,
        routes_per_fleet: Vec<Vec<Route>>,
        production: Vec<usize>,
        backfill: Vec<usize>,
        supply_hi_kg: Vec<f64>,
        demand_hi_kg: Vec<f64>,
        occupancy: Vec<u32>,
        hauled_kg: Vec<f64>,
        delivered_kg: Vec<f64>,
        periods: usize,
        best: Option<f64>,
    }

    impl Search<'_> {
        fn apply(&mut self, route: &Route, undo: bool) -> bool {
            // Forward pass checks caps; the undo pass reverses blindly.
            if undo {
                for &(site, p) in &route.occupancy {
                    self.occupancy[site * self.periods + p as usize] -= 1;
                }
                for &(site, kg) in &route.hauled_kg {
                    let slot = self.production.iter().position(|&s| s == site).unwrap();
                    self.hauled_kg[slot] -= kg;
                }
                for &(site, kg) in &route.delivered_kg {
                    let slot = self.backfill.iter().position(|&s| s == site).unwrap();
                    self.delivered_kg[slot] -= kg;
                }
                return true;
            }
            for (k, &(site, p)) in route.occupancy.iter().enumerate() {
                let cell = site * self.periods + p as usize;
                if self.occupancy[cell] + 1 > self.scenario.sites[site].service_capacity {
                    for &(s2, p2) in &route.occupancy[..k] {
                        self.occupancy[s2 * self.periods + p2 as usize] -= 1;
                    }
                    return false;
                }
                self.occupancy[cell] += 1;
            }
            let mut ok = true;
            for &(site, kg) in &route.hauled_kg {
                let slot = self.production.iter().position(|&s| s == site).unwrap();
                self.hauled_kg[slot] += kg;
                if self.hauled_kg[slot] > self.supply_hi_kg[slot] + 1e-6 {
                    ok = false;
                }
            }
            for &(site, kg) in &route.delivered_kg {
                let slot = self.backfill.iter().position(|&s| s == site).unwrap();
                self.delivered_kg[slot] += kg;
                if self.delivered_kg[slot] > self.demand_hi_kg[slot] + 1e-6 {
                    ok = false;
                }
            }
            if !ok {
                self.apply(route, true);
                return false;
            }
            true
        }

        fn windows_met(&self) -> bool {
            for (slot, &site) in self.production.iter().enumerate() {
                if self.hauled_kg[slot] < self.scenario.sites[site].supply_tonnes * 1000.0 - 1e-6 {
                    return false;
                }
            }
            for (slot, &site) in self.backfill.iter().enumerate() {
                if self.delivered_kg[slot]
                    < self.scenario.sites[site].demand_tonnes * 1000.0 - 1e-6
                {
                    return false;
                }
            }
            true
        }

        /// `min_choice` forces same-fleet trucks into non-decreasing route
        /// indices, collapsing permutations of identical trucks.
        fn descend(&mut self, truck: usize, min_choice: &mut Vec<usize>, cost: f64) {
            if truck == self.truck_fleets.len() {
                if self.windows_met() {
                    self.best = Some(match self.best {
                        None => cost,
                        Some(b) => b.min(cost),
                    });
                }
                return;
            }
            let fleet = self.truck_fleets[truck];
            let start = min_choice[fleet];
            // Choice 0 parks the truck; choice i+1 runs route i.
            let route_count = self.routes_per_fleet[fleet].len();
            for choice in start..=route_count {
                if choice > 0 {
                    let route = self.routes_per_fleet[fleet][choice - 1].clone();
                    if !self.apply(&route, false) {
                        continue;
                    }
                    let saved = min_choice[fleet];
                    min_choice[fleet] = choice;
                    self.descend(truck + 1, min_choice, cost + route.cost);
                    min_choice[fleet] = saved;
                    self.apply(&route, true);
                } else {
                    let saved = min_choice[fleet];
                    min_choice[fleet] = choice;
                    self.descend(truck + 1, min_choice, cost);
                    min_choice[fleet] = saved;
                }
            }
        }
    }

    let mut search = Search {
        scenario,
        truck_fleets,
        routes_per_fleet,
        production,
        backfill,
        supply_hi_kg,
        demand_hi_kg,
        occupancy: vec![0; n * (t_max + 1)],
        hauled_kg: vec![0.0; scenario.production_sites().len()],
        delivered_kg: vec![0.0; scenario.backfill_sites().len()],
        periods: t_max + 1,
        best: None,
    };
    let mut min_choice = vec![0; scenario.fleets.len()];
    search.descend(0, &mut min_choice, 0.0);
    search.best
}
