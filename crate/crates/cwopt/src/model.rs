//! Solver-agnostic MILP assembly for the carrier scheduling problem.
//!
//! Four variants share one variable space and one constraint block:
//! - the profit baseline at the fixed market treatment fee,
//! - the fee-parameterized lower level of the subsidy design problem,
//! - the pollution-minimizing relaxation over the same feasible region
//!   (the lower bound used for gap reporting),
//! - the multi-type extension where cargo carries a category and fees are
//!   per category.
//!
//! Money is CNY throughout; loads convert kg -> tonnes at a single point
//! (`Fleet::load_tonnes`). Flow conservation makes one service interval
//! mandatory between arriving at a site and departing from it.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::emissions::{facility_term, transport_terms};
use crate::network::{build_network, ArcClass};
use crate::scenario::{Scenario, SiteKind};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("fee schedule out of bounds: {0}")]
    FeeOutOfBounds(String),
    #[error("fee schedule has wrong shape: expected {expected} values, got {got}")]
    FeeShape { expected: usize, got: usize },
    #[error("scenario declares no waste types; the multi-type model needs at least one")]
    MissingWasteTypes,
    #[error("solution does not match instance: {0}")]
    DimensionMismatch(String),
}

/// Treatment fee per tonne for every (facility, fleet) pair, and per cargo
/// type when the scenario is typed. This is the upper-level decision vector;
/// components are laid out facility-major, fleet next, type innermost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeeSchedule {
    pub facilities: Vec<usize>,
    pub fleet_count: usize,
    /// Declared cargo type ids; empty for the single-type model.
    pub type_ids: Vec<u16>,
    values: Vec<f64>,
}

impl FeeSchedule {
    pub fn dimension(scenario: &Scenario) -> usize {
        scenario.processing_sites().len()
            * scenario.fleets.len()
            * scenario.waste_types.len().max(1)
    }

    /// Same fee everywhere, e.g. the market fee.
    pub fn uniform(scenario: &Scenario, fee: f64) -> FeeSchedule {
        let facilities = scenario.processing_sites();
        let fleet_count = scenario.fleets.len();
        let type_ids: Vec<u16> = scenario.waste_types.iter().map(|t| t.id).collect();
        let len = facilities.len() * fleet_count * type_ids.len().max(1);
        FeeSchedule {
            facilities,
            fleet_count,
            type_ids,
            values: vec![fee; len],
        }
    }

    pub fn from_values(scenario: &Scenario, values: Vec<f64>) -> Result<FeeSchedule, ModelError> {
        let expected = Self::dimension(scenario);
        if values.len() != expected {
            return Err(ModelError::FeeShape {
                expected,
                got: values.len(),
            });
        }
        Ok(FeeSchedule {
            facilities: scenario.processing_sites(),
            fleet_count: scenario.fleets.len(),
            type_ids: scenario.waste_types.iter().map(|t| t.id).collect(),
            values,
        })
    }

    fn type_slots(&self) -> usize {
        self.type_ids.len().max(1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, facility_pos: usize, fleet: usize, type_pos: usize) -> f64 {
        self.values[(facility_pos * self.fleet_count + fleet) * self.type_slots() + type_pos]
    }

    /// Fee for a processing site by scenario index. `waste_type` is the
    /// declared id for typed scenarios and `None` otherwise.
    pub fn value_for_site(&self, site: usize, fleet: usize, waste_type: Option<u16>) -> f64 {
        let fpos = self
            .facilities
            .iter()
            .position(|&f| f == site)
            .expect("site is a processing facility");
        let tpos = match waste_type {
            None => 0,
            Some(c) => self
                .type_ids
                .iter()
                .position(|&id| id == c)
                .expect("declared waste type"),
        };
        self.value_at(fpos, fleet, tpos)
    }

    /// Column labels in component order, for CSV headers.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.values.len());
        for &site in &self.facilities {
            for v in 0..self.fleet_count {
                if self.type_ids.is_empty() {
                    out.push(format!("fee_p{site}_f{v}"));
                } else {
                    for &c in &self.type_ids {
                        out.push(format!("fee_p{site}_f{v}_c{c}"));
                    }
                }
            }
        }
        out
    }

    pub fn validate_bounds(&self, scenario: &Scenario) -> Result<(), ModelError> {
        let lo = scenario.econ.fee_lower_cny_per_tonne;
        let hi = scenario.econ.fee_upper_cny_per_tonne;
        for (i, &v) in self.values.iter().enumerate() {
            if v < lo - 1e-9 || v > hi + 1e-9 {
                return Err(ModelError::FeeOutOfBounds(format!(
                    "component {i} = {v} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// One integer flow variable: trucks of `fleet` taking the arc
/// `from -> to` departing at `depart`. `waste_type` is `None` in
/// single-type instances; typed instances use `Some(0)` for empty running
/// and declared ids for loaded arcs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarDef {
    pub from: usize,
    pub to: usize,
    pub fleet: usize,
    pub depart: u32,
    pub arrive: u32,
    pub class: ArcClass,
    pub waste_type: Option<u16>,
    pub upper: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// Dispatches of a fleet cannot exceed its truck count.
    DispatchCap { fleet: usize },
    /// Every dispatched truck returns to the depot.
    DepotBalance { fleet: usize },
    /// Arrivals of the previous period feed departures of this one.
    Conservation { site: usize, fleet: usize, period: u32 },
    /// Trucks arriving or dwelling at a site in one period.
    Capacity { site: usize, period: u32 },
    SupplyLower { site: usize },
    SupplyUpper { site: usize },
    DemandLower { site: usize },
    DemandUpper { site: usize },
    /// Typed instances: total flow on one arc across cargo types.
    ArcTypeCap { from: usize, to: usize, fleet: usize, depart: u32 },
}

impl RowKind {
    pub fn describe(&self) -> String {
        match self {
            RowKind::DispatchCap { fleet } => format!("fleet {fleet} dispatch cap"),
            RowKind::DepotBalance { fleet } => format!("fleet {fleet} depot return balance"),
            RowKind::Conservation { site, fleet, period } => {
                format!("flow conservation at site {site}, fleet {fleet}, period {period}")
            }
            RowKind::Capacity { site, period } => {
                format!("service capacity at site {site}, period {period}")
            }
            RowKind::SupplyLower { site } => format!("supply floor at production site {site}"),
            RowKind::SupplyUpper { site } => format!("supply ceiling at production site {site}"),
            RowKind::DemandLower { site } => format!("demand floor at backfill site {site}"),
            RowKind::DemandUpper { site } => format!("demand ceiling at backfill site {site}"),
            RowKind::ArcTypeCap { from, to, fleet, depart } => {
                format!("type-summed arc cap {from}->{to} fleet {fleet} depart {depart}")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Row {
    pub kind: RowKind,
    pub sense: Sense,
    pub rhs: f64,
    pub terms: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    /// Profit baseline at the fixed market fee.
    Baseline,
    /// Fee-parameterized carrier response.
    LowerLevel,
    /// Pollution minimum over the same feasible region.
    PollutionBound,
    /// Typed carrier response.
    MultiTypeLower,
}

#[derive(Debug, Clone)]
pub struct MilpInstance {
    pub tag: ModelTag,
    pub scenario_hash: String,
    pub vars: Arc<[VarDef]>,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

impl MilpInstance {
    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    /// Exact feasibility check of an integer flow vector against every row.
    pub fn validate_flows(&self, flows: &[u32]) -> Result<(), ModelError> {
        if flows.len() != self.vars.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} flows for {} variables",
                flows.len(),
                self.vars.len()
            )));
        }
        for (j, (&f, var)) in flows.iter().zip(self.vars.iter()).enumerate() {
            if f > var.upper {
                return Err(ModelError::DimensionMismatch(format!(
                    "variable {j} exceeds its bound: {f} > {}",
                    var.upper
                )));
            }
        }
        for row in &self.rows {
            let lhs: f64 = row
                .terms
                .iter()
                .map(|&(j, c)| c * flows[j] as f64)
                .sum();
            let tol = 1e-6 * (1.0 + row.rhs.abs());
            let ok = match row.sense {
                Sense::Le => lhs <= row.rhs + tol,
                Sense::Ge => lhs >= row.rhs - tol,
                Sense::Eq => (lhs - row.rhs).abs() <= tol,
            };
            if !ok {
                return Err(ModelError::DimensionMismatch(format!(
                    "violated: {} (lhs {lhs}, rhs {})",
                    row.kind.describe(),
                    row.rhs
                )));
            }
        }
        Ok(())
    }

    /// Write the instance in LP text format for cross-checks with external
    /// solvers.
    pub fn write_lp(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "\\ {:?} instance, scenario {}", self.tag, self.scenario_hash)?;
        writeln!(w, "Minimize")?;
        write!(w, " obj:")?;
        let mut first = true;
        for (j, &c) in self.objective.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            if first && c >= 0.0 {
                write!(w, " {c} x{j}")?;
            } else if c >= 0.0 {
                write!(w, " + {c} x{j}")?;
            } else {
                write!(w, " - {} x{j}", -c)?;
            }
            first = false;
            if j % 8 == 7 {
                writeln!(w)?;
                write!(w, "   ")?;
            }
        }
        if first {
            write!(w, " 0 x0")?;
        }
        writeln!(w)?;
        writeln!(w, "Subject To")?;
        for (i, row) in self.rows.iter().enumerate() {
            write!(w, " c{i}:")?;
            if row.terms.is_empty() {
                write!(w, " 0 x0")?;
            }
            for (k, &(j, c)) in row.terms.iter().enumerate() {
                if c >= 0.0 {
                    write!(w, " + {c} x{j}")?;
                } else {
                    write!(w, " - {} x{j}", -c)?;
                }
                if k % 8 == 7 {
                    writeln!(w)?;
                    write!(w, "   ")?;
                }
            }
            let op = match row.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            writeln!(w, " {op} {}", row.rhs)?;
        }
        writeln!(w, "Bounds")?;
        for (j, var) in self.vars.iter().enumerate() {
            writeln!(w, " 0 <= x{j} <= {}", var.upper)?;
        }
        writeln!(w, "Generals")?;
        for j in 0..self.vars.len() {
            if j % 16 == 0 && j > 0 {
                writeln!(w)?;
            }
            write!(w, " x{j}")?;
        }
        writeln!(w)?;
        writeln!(w, "End")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    OptimalWithinGap,
    TimeLimit,
    Infeasible,
}

/// One nonzero flow of a solved schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowEntry {
    pub from: usize,
    pub to: usize,
    pub fleet: usize,
    pub depart: u32,
    pub arrive: u32,
    pub class: ArcClass,
    pub waste_type: Option<u16>,
    pub flow: u32,
}

/// Integer flows returned by the solver, aligned with the instance's
/// variable order and carrying the variable definitions so censuses and
/// pollution accounting need no instance lookup.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub vars: Arc<[VarDef]>,
    pub flows: Vec<u32>,
    pub objective_value: f64,
    pub solver_gap: f64,
    pub status: SolveStatus,
    /// Root-level certificate when `status == Infeasible`.
    pub infeasibility: Option<String>,
}

impl FlowSolution {
    pub fn entries(&self) -> impl Iterator<Item = FlowEntry> + '_ {
        self.vars
            .iter()
            .zip(self.flows.iter())
            .filter(|(_, &f)| f > 0)
            .map(|(v, &f)| FlowEntry {
                from: v.from,
                to: v.to,
                fleet: v.fleet,
                depart: v.depart,
                arrive: v.arrive,
                class: v.class,
                waste_type: v.waste_type,
                flow: f,
            })
    }

    /// Trucks dispatched per fleet (depot departures).
    pub fn dispatch_census(&self, scenario: &Scenario) -> Vec<u32> {
        let depot = scenario.depot();
        let mut counts = vec![0u32; scenario.fleets.len()];
        for e in self.entries() {
            if e.from == depot {
                counts[e.fleet] += e.flow;
            }
        }
        counts
    }

    pub fn tonnage_census(&self, scenario: &Scenario) -> TonnageCensus {
        let mut census = TonnageCensus {
            per_fleet: vec![0.0; scenario.fleets.len()],
            ..TonnageCensus::default()
        };
        for e in self.entries() {
            if e.class != ArcClass::FullyLoaded {
                continue;
            }
            let tonnes = scenario.fleets[e.fleet].load_tonnes() * e.flow as f64;
            let from = scenario.sites[e.from].kind;
            let to = scenario.sites[e.to].kind;
            match (from, to) {
                (SiteKind::Production, SiteKind::Processing) => {
                    census.production_to_processing += tonnes
                }
                (SiteKind::Production, SiteKind::Backfill) => {
                    census.production_to_backfill += tonnes
                }
                (SiteKind::Processing, SiteKind::Backfill) => {
                    census.processing_to_backfill += tonnes
                }
                _ => {}
            }
            census.per_fleet[e.fleet] += tonnes;
            census.total += tonnes;
        }
        census
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TonnageCensus {
    pub production_to_processing: f64,
    pub production_to_backfill: f64,
    pub processing_to_backfill: f64,
    pub per_fleet: Vec<f64>,
    pub total: f64,
}

/// Carrier profit of a solved schedule under a fee schedule: transport
/// revenue minus fixed and travel costs. The solver minimizes the negative
/// of this.
pub fn carrier_profit(
    solution: &FlowSolution,
    scenario: &Scenario,
    fees: &FeeSchedule,
) -> f64 {
    let depot = scenario.depot();
    let c2 = scenario.econ.transport_price_cny_per_tonne;
    let mut profit = 0.0;
    for e in solution.entries() {
        let fleet = &scenario.fleets[e.fleet];
        let flow = e.flow as f64;
        if e.from == depot {
            profit -= fleet.fixed_cost_cny * flow;
            continue;
        }
        if e.to == depot || e.class == ArcClass::Service {
            continue;
        }
        let r = e.arrive - e.depart;
        profit -= fleet.travel_cost_cny_per_interval * r as f64 * flow;
        if e.class == ArcClass::FullyLoaded {
            let tonnes = fleet.load_tonnes() * flow;
            if scenario.sites[e.to].kind == SiteKind::Backfill {
                profit += c2 * tonnes;
            } else {
                let fee = fees.value_for_site(e.to, e.fleet, e.waste_type);
                profit += (c2 - fee) * tonnes;
            }
        }
    }
    profit
}

/// Fee income collected by the government: sum of fee times tonnes over
/// every production-to-processing truckload. The subsidy objective is the
/// negative of this.
pub fn government_revenue(
    solution: &FlowSolution,
    scenario: &Scenario,
    fees: &FeeSchedule,
) -> f64 {
    let mut revenue = 0.0;
    for e in solution.entries() {
        if e.class == ArcClass::FullyLoaded
            && scenario.sites[e.from].kind == SiteKind::Production
            && scenario.sites[e.to].kind == SiteKind::Processing
        {
            let tonnes = scenario.fleets[e.fleet].load_tonnes() * e.flow as f64;
            revenue += fees.value_for_site(e.to, e.fleet, e.waste_type) * tonnes;
        }
    }
    revenue
}

/// Largest tonnage strictly below `(1 + eps2) * q` that integer truckloads
/// can reach: loads are whole kilograms, so step one kg below the bound
/// (exactly on it when the bound itself is a whole number of kg). Zero
/// declared tonnage pins the window shut. The enumeration oracle in the
/// test suite applies this same rule.
pub fn strict_window_upper_tonnes(q: f64, eps2: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let bound_kg = (1.0 + eps2) * q * 1000.0;
    let rounded = bound_kg.round();
    let kg = if (bound_kg - rounded).abs() < 1e-6 {
        rounded - 1.0
    } else {
        bound_kg.floor()
    };
    kg / 1000.0
}

/// Profit baseline: every facility charges the fixed market fee. The market
/// fee is exempt from the fee bounds, which constrain only the designed
/// schedule.
pub fn assemble_m1(scenario: &Scenario, market_fee: f64) -> MilpInstance {
    let fees = FeeSchedule::uniform(scenario, market_fee);
    assemble(scenario, Objective::Profit(&fees), ModelTag::Baseline)
}

/// Carrier response under a designed fee schedule. Fees must respect the
/// scenario's bounds.
pub fn assemble_lower(scenario: &Scenario, fees: &FeeSchedule) -> Result<MilpInstance, ModelError> {
    fees.validate_bounds(scenario)?;
    let tag = if scenario.is_typed() {
        ModelTag::MultiTypeLower
    } else {
        ModelTag::LowerLevel
    };
    Ok(assemble(scenario, Objective::Profit(fees), tag))
}

/// Pollution minimum over the carrier's feasible region. Fee bounds do not
/// appear: the objective carries no fee terms.
pub fn assemble_hpr(scenario: &Scenario) -> MilpInstance {
    assemble(scenario, Objective::Pollution, ModelTag::PollutionBound)
}

/// Typed carrier response. Requires declared waste types; empty running is
/// the implicit type 0 and loaded arcs carry one variable per declared type.
pub fn assemble_m4_lower(
    scenario: &Scenario,
    fees: &FeeSchedule,
) -> Result<MilpInstance, ModelError> {
    if !scenario.is_typed() {
        return Err(ModelError::MissingWasteTypes);
    }
    assemble_lower(scenario, fees)
}

enum Objective<'a> {
    Profit(&'a FeeSchedule),
    Pollution,
}

/// Shared assembly. Builds the variable space from the support graph, then
/// the constraint block, then the requested objective.
fn assemble(scenario: &Scenario, objective: Objective<'_>, tag: ModelTag) -> MilpInstance {
    let net = build_network(scenario);
    let depot = scenario.depot();
    let horizon = scenario.horizon.intervals;
    let fleet_count = scenario.fleets.len();
    let n_sites = scenario.sites.len();
    let typed = scenario.is_typed();
    let loaded_types: Vec<Option<u16>> = if typed {
        scenario.waste_types.iter().map(|t| Some(t.id)).collect()
    } else {
        vec![None]
    };
    let empty_type: Option<u16> = if typed { Some(0) } else { None };

    let mut vars: Vec<VarDef> = Vec::new();
    for pair in &net.pairs {
        let slots: &[Option<u16>] = if pair.class == ArcClass::FullyLoaded {
            &loaded_types
        } else {
            std::slice::from_ref(&empty_type)
        };
        for fleet in 0..fleet_count {
            // Flow is capped by the destination's service capacity; the
            // depot has none, so fleet size bounds return arcs.
            let cap = if pair.to == depot {
                scenario.fleets[fleet].truck_count
            } else {
                scenario.sites[pair.to].service_capacity
            };
            for t in pair.departure_iter() {
                for &wt in slots {
                    vars.push(VarDef {
                        from: pair.from,
                        to: pair.to,
                        fleet,
                        depart: t,
                        arrive: t + pair.duration,
                        class: pair.class,
                        waste_type: wt,
                        upper: cap,
                    });
                }
            }
        }
    }
    for &site in &net.service_sites {
        let cap = scenario.sites[site].service_capacity;
        for fleet in 0..fleet_count {
            for t in 0..horizon {
                vars.push(VarDef {
                    from: site,
                    to: site,
                    fleet,
                    depart: t,
                    arrive: t + 1,
                    class: ArcClass::Service,
                    waste_type: empty_type,
                    upper: cap,
                });
            }
        }
    }

    // Index maps: arrivals and departures per (site, fleet, period), plus
    // whole-horizon lists per fleet for the depot rows.
    let periods = horizon as usize + 1;
    let idx = |site: usize, fleet: usize, t: u32| -> usize {
        (site * fleet_count + fleet) * periods + t as usize
    };
    let mut movement_in: Vec<Vec<usize>> = vec![Vec::new(); n_sites * fleet_count * periods];
    let mut movement_out: Vec<Vec<usize>> = vec![Vec::new(); n_sites * fleet_count * periods];
    let mut service_start: Vec<Option<Vec<usize>>> =
        vec![None; n_sites * fleet_count * periods];
    for (j, var) in vars.iter().enumerate() {
        match var.class {
            ArcClass::Service => {
                let slot = &mut service_start[idx(var.from, var.fleet, var.depart)];
                slot.get_or_insert_with(Vec::new).push(j);
            }
            _ => {
                movement_out[idx(var.from, var.fleet, var.depart)].push(j);
                movement_in[idx(var.to, var.fleet, var.arrive)].push(j);
            }
        }
    }

    let mut rows: Vec<Row> = Vec::new();

    for fleet in 0..fleet_count {
        let mut dispatch = Vec::new();
        let mut balance = Vec::new();
        for t in 0..=horizon {
            for &j in &movement_out[idx(depot, fleet, t)] {
                dispatch.push((j, 1.0));
                balance.push((j, 1.0));
            }
            for &j in &movement_in[idx(depot, fleet, t)] {
                balance.push((j, -1.0));
            }
        }
        rows.push(Row {
            kind: RowKind::DispatchCap { fleet },
            sense: Sense::Le,
            rhs: scenario.fleets[fleet].truck_count as f64,
            terms: dispatch,
        });
        rows.push(Row {
            kind: RowKind::DepotBalance { fleet },
            sense: Sense::Eq,
            rhs: 0.0,
            terms: balance,
        });
    }

    for site in 0..n_sites {
        if site == depot {
            continue;
        }
        for fleet in 0..fleet_count {
            for t in 0..=horizon {
                let mut terms = Vec::new();
                if t >= 1 {
                    for &j in &movement_in[idx(site, fleet, t - 1)] {
                        terms.push((j, 1.0));
                    }
                    if let Some(list) = &service_start[idx(site, fleet, t - 1)] {
                        for &j in list {
                            terms.push((j, 1.0));
                        }
                    }
                }
                for &j in &movement_out[idx(site, fleet, t)] {
                    terms.push((j, -1.0));
                }
                if t <= horizon.saturating_sub(1) {
                    if let Some(list) = &service_start[idx(site, fleet, t)] {
                        for &j in list {
                            terms.push((j, -1.0));
                        }
                    }
                }
                rows.push(Row {
                    kind: RowKind::Conservation { site, fleet, period: t },
                    sense: Sense::Eq,
                    rhs: 0.0,
                    terms,
                });
            }
        }
    }

    for site in 0..n_sites {
        if site == depot {
            continue;
        }
        for t in 0..=horizon {
            let mut terms = Vec::new();
            for fleet in 0..fleet_count {
                for &j in &movement_in[idx(site, fleet, t)] {
                    terms.push((j, 1.0));
                }
                if let Some(list) = &service_start[idx(site, fleet, t)] {
                    for &j in list {
                        terms.push((j, 1.0));
                    }
                }
            }
            rows.push(Row {
                kind: RowKind::Capacity { site, period: t },
                sense: Sense::Le,
                rhs: scenario.sites[site].service_capacity as f64,
                terms,
            });
        }
    }

    let eps2 = scenario.econ.epsilon2;
    for &site in &scenario.production_sites() {
        let mut terms = Vec::new();
        for (j, var) in vars.iter().enumerate() {
            if var.class == ArcClass::FullyLoaded && var.from == site {
                terms.push((j, scenario.fleets[var.fleet].load_tonnes()));
            }
        }
        let qs = scenario.sites[site].supply_tonnes;
        rows.push(Row {
            kind: RowKind::SupplyLower { site },
            sense: Sense::Ge,
            rhs: qs,
            terms: terms.clone(),
        });
        rows.push(Row {
            kind: RowKind::SupplyUpper { site },
            sense: Sense::Le,
            rhs: strict_window_upper_tonnes(qs, eps2),
            terms,
        });
    }
    for &site in &scenario.backfill_sites() {
        let mut terms = Vec::new();
        for (j, var) in vars.iter().enumerate() {
            if var.class == ArcClass::FullyLoaded && var.to == site {
                terms.push((j, scenario.fleets[var.fleet].load_tonnes()));
            }
        }
        let qd = scenario.sites[site].demand_tonnes;
        rows.push(Row {
            kind: RowKind::DemandLower { site },
            sense: Sense::Ge,
            rhs: qd,
            terms: terms.clone(),
        });
        rows.push(Row {
            kind: RowKind::DemandUpper { site },
            sense: Sense::Le,
            rhs: strict_window_upper_tonnes(qd, eps2),
            terms,
        });
    }

    if typed && loaded_types.len() > 1 {
        // Per-arc cap across cargo types; single-type arcs are already
        // bounded by the variable bound.
        let mut run_start = 0;
        while run_start < vars.len() {
            let v0 = vars[run_start];
            if v0.class != ArcClass::FullyLoaded {
                run_start += 1;
                continue;
            }
            let mut run_end = run_start + 1;
            while run_end < vars.len() {
                let v = vars[run_end];
                if v.class == ArcClass::FullyLoaded
                    && v.from == v0.from
                    && v.to == v0.to
                    && v.fleet == v0.fleet
                    && v.depart == v0.depart
                {
                    run_end += 1;
                } else {
                    break;
                }
            }
            if run_end - run_start > 1 {
                rows.push(Row {
                    kind: RowKind::ArcTypeCap {
                        from: v0.from,
                        to: v0.to,
                        fleet: v0.fleet,
                        depart: v0.depart,
                    },
                    sense: Sense::Le,
                    rhs: v0.upper as f64,
                    terms: (run_start..run_end).map(|j| (j, 1.0)).collect(),
                });
            }
            run_start = run_end;
        }
    }

    let c2 = scenario.econ.transport_price_cny_per_tonne;
    let objective_coeffs: Vec<f64> = vars
        .iter()
        .map(|var| match &objective {
            Objective::Profit(fees) => {
                if var.from == depot {
                    scenario.fleets[var.fleet].fixed_cost_cny
                } else if var.to == depot || var.class == ArcClass::Service {
                    0.0
                } else {
                    let r = (var.arrive - var.depart) as f64;
                    let mut c =
                        scenario.fleets[var.fleet].travel_cost_cny_per_interval * r;
                    if var.class == ArcClass::FullyLoaded {
                        let tonnes = scenario.fleets[var.fleet].load_tonnes();
                        if scenario.sites[var.to].kind == SiteKind::Backfill {
                            c -= c2 * tonnes;
                        } else {
                            let fee = fees.value_for_site(var.to, var.fleet, var.waste_type);
                            c -= (c2 - fee) * tonnes;
                        }
                    }
                    c
                }
            }
            Objective::Pollution => {
                if var.class == ArcClass::Service || var.from == depot || var.to == depot {
                    0.0
                } else {
                    let loaded = var.class == ArcClass::FullyLoaded;
                    transport_terms(scenario, var.from, var.to, var.fleet, loaded).sum()
                        + facility_term(scenario, var.from, var.to, var.fleet)
                }
            }
        })
        .collect();

    MilpInstance {
        tag,
        scenario_hash: scenario.content_hash(),
        vars: vars.into(),
        objective: objective_coeffs,
        rows,
    }
}
