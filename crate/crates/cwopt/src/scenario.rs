//! Problem instances: sites, fleets, distances, economics, emission constants,
//! plus file loading, validation, and a seeded synthetic generator.
//!
//! A scenario is immutable once validated and can be shared freely across
//! solver workers.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{ceil5, floor5, fnv1a64};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse scenario file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    Depot,
    Processing,
    Production,
    Backfill,
}

impl SiteKind {
    pub fn label(self) -> &'static str {
        match self {
            SiteKind::Depot => "depot",
            SiteKind::Processing => "processing",
            SiteKind::Production => "production",
            SiteKind::Backfill => "backfill",
        }
    }
}

/// One physical location. Which optional fields apply depends on `kind`:
/// production sites carry `supply_tonnes`, backfill sites `demand_tonnes`,
/// processing facilities `pollution_factor`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Site {
    pub id: usize,
    pub kind: SiteKind,
    /// Trucks that can be serviced per interval (ignored for the depot).
    #[serde(default)]
    pub service_capacity: u32,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub supply_tonnes: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub demand_tonnes: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub pollution_factor: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FleetKind {
    Electric,
    Diesel,
}

impl FleetKind {
    pub fn label(self) -> &'static str {
        match self {
            FleetKind::Electric => "electric",
            FleetKind::Diesel => "diesel",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fleet {
    pub id: usize,
    pub kind: FleetKind,
    pub truck_count: u32,
    pub rated_load_kg: f64,
    pub unladen_weight_kg: f64,
    /// Per truck per day, charged once on dispatch.
    pub fixed_cost_cny: f64,
    /// Per interval of inter-site driving.
    pub travel_cost_cny_per_interval: f64,
}

impl Fleet {
    /// Rated load in tonnes; every money and pollution term that multiplies
    /// a load converts through this single point.
    pub fn load_tonnes(&self) -> f64 {
        self.rated_load_kg / 1000.0
    }

    /// Gross laden mass in kg.
    pub fn laden_mass_kg(&self) -> f64 {
        self.rated_load_kg + self.unladen_weight_kg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EconParams {
    pub transport_price_cny_per_tonne: f64,
    pub market_fee_cny_per_tonne: f64,
    /// Lower fee bound. May be negative: a negative fee is a per-tonne
    /// subsidy paid to the carrier.
    pub fee_lower_cny_per_tonne: f64,
    pub fee_upper_cny_per_tonne: f64,
    /// Relative slack on the supply/demand windows.
    #[serde(default = "default_epsilon2")]
    pub epsilon2: f64,
}

fn default_epsilon2() -> f64 {
    0.05
}

/// Engine and road-load constants for the fuel-rate model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmissionParams {
    pub fuel_air_ratio: f64,
    pub engine_friction_kj_rev_l: f64,
    pub engine_speed_rps: f64,
    pub displacement_l: f64,
    pub heating_value_kj_g: f64,
    pub engine_efficiency: f64,
    pub drivetrain_efficiency: f64,
    pub accel_mps2: f64,
    pub gravity_mps2: f64,
    pub road_angle_deg: f64,
    pub drag_coeff: f64,
    pub rolling_coeff: f64,
    pub air_density_kg_m3: f64,
    pub frontal_area_m2: f64,
    pub fuel_conversion_g_per_l: f64,
}

/// Constants derived from [`EmissionParams`]. Always recomputed from the raw
/// fields, never stored, so they cannot drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionDerived {
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl EmissionParams {
    pub fn derived(&self) -> EmissionDerived {
        let rad = self.road_angle_deg.to_radians();
        EmissionDerived {
            lambda: self.fuel_air_ratio
                / (self.heating_value_kj_g * self.fuel_conversion_g_per_l),
            gamma: 1.0 / (1000.0 * self.drivetrain_efficiency * self.engine_efficiency),
            alpha: self.accel_mps2
                + self.gravity_mps2 * rad.sin()
                + self.gravity_mps2 * self.rolling_coeff * rad.cos(),
            beta: 0.5 * self.drag_coeff * self.air_density_kg_m3 * self.frontal_area_m2,
        }
    }

    /// Road-load coefficient for a specific site pair. Flat terrain makes this
    /// a constant today; the per-pair hook is where grade data would plug in.
    pub fn alpha_for(&self, _from: usize, _to: usize) -> f64 {
        self.derived().alpha
    }

    pub fn engine_friction_term(&self) -> f64 {
        self.engine_friction_kj_rev_l * self.engine_speed_rps * self.displacement_l
    }
}

impl Default for EmissionParams {
    fn default() -> Self {
        EmissionParams {
            fuel_air_ratio: 1.0,
            engine_friction_kj_rev_l: 0.2,
            engine_speed_rps: 32.0,
            displacement_l: 12.54,
            heating_value_kj_g: 44.0,
            engine_efficiency: 0.9,
            drivetrain_efficiency: 0.4,
            accel_mps2: 0.0,
            gravity_mps2: 9.81,
            road_angle_deg: 0.0,
            drag_coeff: 0.7,
            rolling_coeff: 0.01,
            air_density_kg_m3: 1.2041,
            frontal_area_m2: 8.9,
            fuel_conversion_g_per_l: 737.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Horizon {
    /// Number of intervals in the planning day; periods run 0..=intervals.
    pub intervals: u32,
    pub interval_minutes: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceUnit {
    Meters,
    Kilometers,
}

/// Dense row-major distance matrix over all sites, depot included. The unit
/// field is mandatory in scenario files; internally everything is meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub unit: DistanceUnit,
    pub matrix: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn meters(&self, from: usize, to: usize) -> f64 {
        let raw = self.matrix[from][to];
        match self.unit {
            DistanceUnit::Meters => raw,
            DistanceUnit::Kilometers => raw * 1000.0,
        }
    }
}

/// A cargo category. Declared ids start at 1; id 0 is reserved for empty
/// running and never appears in a scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WasteType {
    pub id: u16,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub horizon: Horizon,
    pub sites: Vec<Site>,
    pub distances: DistanceMatrix,
    pub fleets: Vec<Fleet>,
    pub econ: EconParams,
    pub emissions: EmissionParams,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waste_types: Vec<WasteType>,
}

impl Scenario {
    pub fn depot(&self) -> usize {
        self.sites
            .iter()
            .position(|s| s.kind == SiteKind::Depot)
            .expect("validated scenario has one depot")
    }

    pub fn sites_of_kind(&self, kind: SiteKind) -> Vec<usize> {
        self.sites
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn processing_sites(&self) -> Vec<usize> {
        self.sites_of_kind(SiteKind::Processing)
    }

    pub fn production_sites(&self) -> Vec<usize> {
        self.sites_of_kind(SiteKind::Production)
    }

    pub fn backfill_sites(&self) -> Vec<usize> {
        self.sites_of_kind(SiteKind::Backfill)
    }

    pub fn distance_m(&self, from: usize, to: usize) -> f64 {
        self.distances.meters(from, to)
    }

    pub fn travel_intervals_between(&self, from: usize, to: usize) -> u32 {
        travel_intervals(
            self.distance_m(from, to),
            self.horizon.speed_mps,
            self.horizon.interval_minutes,
        )
    }

    /// Look-back depth of the time axis: one more than the longest travel
    /// time between any two sites. Recomputed from the distance matrix,
    /// never user-supplied.
    pub fn virtual_horizon(&self) -> u32 {
        let n = self.sites.len();
        let mut max_r = 0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    max_r = max_r.max(self.travel_intervals_between(i, j));
                }
            }
        }
        max_r + 1
    }

    /// True when the scenario declares cargo categories (typed models).
    pub fn is_typed(&self) -> bool {
        !self.waste_types.is_empty()
    }

    /// Stable content hash used to tie solutions, metrics, and manifests to
    /// the exact instance they were computed on.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        format!("fnv1a:{:016x}", fnv1a64(&bytes))
    }

    pub fn total_supply_tonnes(&self) -> f64 {
        self.sites.iter().map(|s| s.supply_tonnes).sum()
    }

    pub fn total_demand_tonnes(&self) -> f64 {
        self.sites.iter().map(|s| s.demand_tonnes).sum()
    }

    /// Hard invariants. Returns every violation, not just the first.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs = Vec::new();
        let n = self.sites.len();

        if n == 0 {
            errs.push("sites: list is empty".into());
        }
        for (i, s) in self.sites.iter().enumerate() {
            if s.id != i {
                errs.push(format!(
                    "sites[{i}]: id {} must equal its position (matrix row order)",
                    s.id
                ));
            }
            match s.kind {
                SiteKind::Depot => {}
                _ => {
                    if s.service_capacity < 1 {
                        errs.push(format!("sites[{i}]: service_capacity must be >= 1"));
                    }
                }
            }
            if s.supply_tonnes < 0.0 {
                errs.push(format!("sites[{i}]: supply_tonnes must be >= 0"));
            }
            if s.demand_tonnes < 0.0 {
                errs.push(format!("sites[{i}]: demand_tonnes must be >= 0"));
            }
            if s.pollution_factor < 0.0 {
                errs.push(format!("sites[{i}]: pollution_factor must be >= 0"));
            }
            if s.supply_tonnes > 0.0 && s.kind != SiteKind::Production {
                errs.push(format!("sites[{i}]: supply_tonnes set on a non-production site"));
            }
            if s.demand_tonnes > 0.0 && s.kind != SiteKind::Backfill {
                errs.push(format!("sites[{i}]: demand_tonnes set on a non-backfill site"));
            }
            if s.pollution_factor > 0.0 && s.kind != SiteKind::Processing {
                errs.push(format!(
                    "sites[{i}]: pollution_factor set on a non-processing site"
                ));
            }
        }
        let depots = self.sites.iter().filter(|s| s.kind == SiteKind::Depot).count();
        if depots != 1 {
            errs.push(format!("sites: expected exactly one depot, found {depots}"));
        }

        if self.distances.matrix.len() != n {
            errs.push(format!(
                "distances: matrix has {} rows, expected {n}",
                self.distances.matrix.len()
            ));
        } else {
            for (i, row) in self.distances.matrix.iter().enumerate() {
                if row.len() != n {
                    errs.push(format!("distances: row {i} has {} entries, expected {n}", row.len()));
                    continue;
                }
                for (j, &d) in row.iter().enumerate() {
                    if i == j && d != 0.0 {
                        errs.push(format!("distances: d[{i}][{i}] must be 0"));
                    }
                    if i != j && !(d > 0.0) {
                        errs.push(format!("distances: d[{i}][{j}] must be > 0"));
                    }
                }
            }
        }

        if self.fleets.is_empty() {
            errs.push("fleets: list is empty".into());
        }
        for (v, f) in self.fleets.iter().enumerate() {
            if f.id != v {
                errs.push(format!("fleets[{v}]: id {} must equal its position", f.id));
            }
            if !(f.rated_load_kg > 0.0) {
                errs.push(format!("fleets[{v}]: rated_load_kg must be > 0"));
            }
            if !(f.unladen_weight_kg > 0.0) {
                errs.push(format!("fleets[{v}]: unladen_weight_kg must be > 0"));
            }
            if f.fixed_cost_cny < 0.0 || f.travel_cost_cny_per_interval < 0.0 {
                errs.push(format!("fleets[{v}]: costs must be >= 0"));
            }
        }

        let econ = &self.econ;
        if econ.fee_lower_cny_per_tonne > econ.fee_upper_cny_per_tonne {
            errs.push(format!(
                "econ: fee_lower {} exceeds fee_upper {}",
                econ.fee_lower_cny_per_tonne, econ.fee_upper_cny_per_tonne
            ));
        } else if ceil5(econ.fee_lower_cny_per_tonne) > floor5(econ.fee_upper_cny_per_tonne) {
            errs.push("econ: no five-decimal fee value lies between the bounds".into());
        }
        if !(econ.epsilon2 > 0.0) {
            errs.push("econ: epsilon2 must be > 0".into());
        }

        if !(self.horizon.intervals >= 1) {
            errs.push("horizon: intervals must be >= 1".into());
        }
        if !(self.horizon.interval_minutes > 0.0) {
            errs.push("horizon: interval_minutes must be > 0".into());
        }
        if !(self.horizon.speed_mps > 0.0) {
            errs.push("horizon: speed_mps must be > 0".into());
        }

        let em = &self.emissions;
        for (name, v) in [
            ("heating_value_kj_g", em.heating_value_kj_g),
            ("fuel_conversion_g_per_l", em.fuel_conversion_g_per_l),
            ("engine_efficiency", em.engine_efficiency),
            ("drivetrain_efficiency", em.drivetrain_efficiency),
        ] {
            if !(v > 0.0) {
                errs.push(format!("emissions: {name} must be > 0"));
            }
        }

        let mut seen = std::collections::BTreeSet::new();
        for (i, wt) in self.waste_types.iter().enumerate() {
            if wt.id == 0 {
                errs.push(format!("waste_types[{i}]: id 0 is reserved for empty running"));
            }
            if !seen.insert(wt.id) {
                errs.push(format!("waste_types[{i}]: duplicate id {}", wt.id));
            }
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(errs))
        }
    }

    /// Soft feasibility screen: can the fleet plausibly haul the declared
    /// supply within the horizon? A truck needs at least two intervals per
    /// load (one travelling, one in service), so `T/2` loads per truck is a
    /// generous ceiling. Warnings only; the solver gives the real answer.
    pub fn feasibility_warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        let loads_per_truck = (self.horizon.intervals / 2) as f64;
        let capacity: f64 = self
            .fleets
            .iter()
            .map(|f| f.truck_count as f64 * f.load_tonnes() * loads_per_truck)
            .sum();
        let supply = self.total_supply_tonnes();
        if capacity < supply {
            warnings.push(format!(
                "fleet haul capacity over the horizon (~{capacity:.0} t) is below total supply ({supply:.0} t)"
            ));
        }
        let demand = self.total_demand_tonnes();
        if capacity < demand {
            warnings.push(format!(
                "fleet haul capacity over the horizon (~{capacity:.0} t) is below total demand ({demand:.0} t)"
            ));
        }
        warnings
    }
}

/// Travel time in whole intervals: minutes at constant speed, rounded up.
/// Zero only for a zero distance.
pub fn travel_intervals(distance_m: f64, speed_mps: f64, interval_minutes: f64) -> u32 {
    if distance_m <= 0.0 {
        return 0;
    }
    let minutes = distance_m / speed_mps / 60.0;
    let intervals = (minutes / interval_minutes - 1e-9).ceil();
    intervals.max(1.0) as u32
}

/// Load a scenario file (JSON, schema in `docs/scenario.schema.json`) and
/// validate it.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let scenario: Scenario = serde_json::from_str(&text)?;
    scenario.validate()?;
    Ok(scenario)
}

/// Parse and validate a scenario from a JSON string.
pub fn scenario_from_json(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text)?;
    scenario.validate()?;
    Ok(scenario)
}

/// Knobs for the synthetic instance generator.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub production: usize,
    pub backfill: usize,
    pub processing: usize,
    /// Square extent, km. Sites are placed uniformly; the depot sits at the
    /// center.
    pub bbox_km: f64,
    pub horizon: Horizon,
    pub fleets: Vec<Fleet>,
    pub econ: EconParams,
    pub emissions: EmissionParams,
    pub supply_mean_tonnes: f64,
    pub supply_std_tonnes: f64,
    /// Service capacities for production / backfill / processing sites.
    pub capacities: (u32, u32, u32),
    /// Cycled over processing facilities in order.
    pub pollution_factors: Vec<f64>,
    pub waste_types: Vec<WasteType>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 42,
            production: 17,
            backfill: 10,
            processing: 3,
            bbox_km: 20.0,
            horizon: Horizon {
                intervals: 60,
                interval_minutes: 10.0,
                speed_mps: 30.0 / 3.6,
            },
            fleets: vec![
                Fleet {
                    id: 0,
                    kind: FleetKind::Electric,
                    truck_count: 30,
                    rated_load_kg: 15_500.0,
                    unladen_weight_kg: 15_500.0,
                    fixed_cost_cny: 550.0,
                    travel_cost_cny_per_interval: 9.5,
                },
                Fleet {
                    id: 1,
                    kind: FleetKind::Diesel,
                    truck_count: 210,
                    rated_load_kg: 15_500.0,
                    unladen_weight_kg: 15_500.0,
                    fixed_cost_cny: 750.0,
                    travel_cost_cny_per_interval: 19.5,
                },
            ],
            econ: EconParams {
                transport_price_cny_per_tonne: 25.0,
                market_fee_cny_per_tonne: 5.0,
                fee_lower_cny_per_tonne: -5.0,
                fee_upper_cny_per_tonne: 7.0,
                epsilon2: 0.05,
            },
            emissions: EmissionParams::default(),
            supply_mean_tonnes: 900.0,
            supply_std_tonnes: 100.0,
            capacities: (2, 3, 3),
            pollution_factors: vec![0.2, 0.4, 0.6],
            waste_types: Vec::new(),
        }
    }
}

/// Build a synthetic scenario. Pure function of the config: the same config
/// (seed included) produces a byte-identical scenario.
pub fn generate_scenario(cfg: &GeneratorConfig) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let extent_m = cfg.bbox_km * 1000.0;

    let mut positions: Vec<(f64, f64)> = vec![(extent_m / 2.0, extent_m / 2.0)];
    let site_total = cfg.processing + cfg.production + cfg.backfill;
    for _ in 0..site_total {
        positions.push((rng.random_range(0.0..extent_m), rng.random_range(0.0..extent_m)));
    }

    let normal = Normal::new(cfg.supply_mean_tonnes, cfg.supply_std_tonnes)
        .expect("std must be finite and positive");
    let draw_tonnes = |rng: &mut ChaCha8Rng| -> f64 {
        let v: f64 = normal.sample(rng);
        v.max(0.0).round()
    };

    let mut sites = vec![Site {
        id: 0,
        kind: SiteKind::Depot,
        service_capacity: 0,
        supply_tonnes: 0.0,
        demand_tonnes: 0.0,
        pollution_factor: 0.0,
    }];
    let (cap_prod, cap_back, cap_proc) = cfg.capacities;
    for p in 0..cfg.processing {
        sites.push(Site {
            id: sites.len(),
            kind: SiteKind::Processing,
            service_capacity: cap_proc,
            supply_tonnes: 0.0,
            demand_tonnes: 0.0,
            pollution_factor: cfg.pollution_factors[p % cfg.pollution_factors.len()],
        });
    }
    for _ in 0..cfg.production {
        let qs = draw_tonnes(&mut rng);
        sites.push(Site {
            id: sites.len(),
            kind: SiteKind::Production,
            service_capacity: cap_prod,
            supply_tonnes: qs,
            demand_tonnes: 0.0,
            pollution_factor: 0.0,
        });
    }
    for _ in 0..cfg.backfill {
        let qd = draw_tonnes(&mut rng);
        sites.push(Site {
            id: sites.len(),
            kind: SiteKind::Backfill,
            service_capacity: cap_back,
            supply_tonnes: 0.0,
            demand_tonnes: qd,
            pollution_factor: 0.0,
        });
    }

    let n = sites.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let (xi, yi) = positions[i];
                let (xj, yj) = positions[j];
                matrix[i][j] = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt().max(1.0);
            }
        }
    }

    let mut fleets = cfg.fleets.clone();
    for (v, f) in fleets.iter_mut().enumerate() {
        f.id = v;
    }

    let scenario = Scenario {
        horizon: cfg.horizon.clone(),
        sites,
        distances: DistanceMatrix {
            unit: DistanceUnit::Meters,
            matrix,
        },
        fleets,
        econ: cfg.econ.clone(),
        emissions: cfg.emissions.clone(),
        waste_types: cfg.waste_types.clone(),
    };
    debug_assert!(scenario.validate().is_ok());
    scenario
}
