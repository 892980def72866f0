//! Fuel-rate and pollution-index accounting.
//!
//! Diesel trucks pollute in proportion to fuel burned, modeled from engine
//! friction, rolling resistance, aerodynamic drag, and payload. Electric
//! trucks contribute no transport pollution. Every truckload treated at a
//! processing facility adds the facility's pollution factor times the load
//! in tonnes, regardless of fleet.

use serde::Serialize;
use thiserror::Error;

use crate::model::FlowSolution;
use crate::network::ArcClass;
use crate::scenario::{EmissionParams, FleetKind, Scenario, SiteKind};

#[derive(Debug, Error)]
pub enum EmissionsError {
    #[error("solution does not match scenario: {0}")]
    DimensionMismatch(String),
}

/// Additive decomposition of the pollution index of a solved schedule.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PollutionBreakdown {
    /// Engine friction burn over driving time (diesel, all movement legs).
    pub engine_term: f64,
    /// Hauling the empty truck mass (diesel, all movement legs).
    pub unladen_term: f64,
    /// Hauling the rated load (diesel, loaded legs only).
    pub payload_term: f64,
    /// Aerodynamic drag at cruise speed (diesel, all movement legs).
    pub speed_term: f64,
    /// Facility treatment of every truckload delivered for processing.
    pub facility_term: f64,
    pub total: f64,
}

impl PollutionBreakdown {
    fn close(mut self) -> Self {
        self.total = self.engine_term
            + self.unladen_term
            + self.payload_term
            + self.speed_term
            + self.facility_term;
        self
    }
}

/// Tractive engine power demand in kW at constant speed `u_mps` and gross
/// mass `mass_kg`. Accessory load is taken as zero.
pub fn engine_power_kw(u_mps: f64, mass_kg: f64, params: &EmissionParams) -> f64 {
    let d = params.derived();
    let traction_kw = (mass_kg * d.alpha + d.beta * u_mps * u_mps) * u_mps / 1000.0;
    traction_kw / params.drivetrain_efficiency
}

/// Fuel consumption rate in liters per second.
pub fn fuel_rate_lps(u_mps: f64, mass_kg: f64, params: &EmissionParams) -> f64 {
    let d = params.derived();
    let knv = params.engine_friction_term();
    d.lambda * (knv + engine_power_kw(u_mps, mass_kg, params) / params.engine_efficiency)
}

/// Fuel burned in liters over `distance_m` at speed `u_mps` with gross mass
/// `mass_kg`. This is the transport pollution index of one diesel leg.
pub fn fuel_consumed_l(u_mps: f64, mass_kg: f64, distance_m: f64, params: &EmissionParams) -> f64 {
    let d = params.derived();
    let knv = params.engine_friction_term();
    d.lambda * (knv + mass_kg * d.gamma * d.alpha * u_mps + d.beta * d.gamma * u_mps.powi(3))
        * distance_m
        / u_mps
}

/// Pollution from treating one truckload at a facility with factor
/// `h_per_tonne`. Loads are stored in kg; the factor is per tonne, so this
/// is the single point where the conversion happens.
pub fn treatment_pollution(h_per_tonne: f64, rated_load_kg: f64) -> f64 {
    h_per_tonne * rated_load_kg / 1000.0
}

/// Per-truck transport pollution terms of one movement leg.
#[derive(Debug, Clone, Copy, Default)]
pub struct TransportTerms {
    pub engine: f64,
    pub unladen: f64,
    pub payload: f64,
    pub speed: f64,
}

impl TransportTerms {
    pub fn sum(&self) -> f64 {
        self.engine + self.unladen + self.payload + self.speed
    }
}

/// Transport pollution of one truck of `fleet` driving `from -> to`,
/// optionally loaded. Zero for electric fleets, for depot legs, and for
/// dwelling in place: only inter-site movements count.
pub fn transport_terms(scenario: &Scenario, from: usize, to: usize, fleet: usize, loaded: bool) -> TransportTerms {
    let f = &scenario.fleets[fleet];
    if f.kind != FleetKind::Diesel || from == to {
        return TransportTerms::default();
    }
    let depot = scenario.depot();
    if from == depot || to == depot {
        return TransportTerms::default();
    }
    let em = &scenario.emissions;
    let d = em.derived();
    let u = scenario.horizon.speed_mps;
    let dist = scenario.distance_m(from, to);
    let alpha = em.alpha_for(from, to);
    TransportTerms {
        engine: em.engine_friction_term() * d.lambda * dist / u,
        unladen: f.unladen_weight_kg * d.gamma * d.lambda * alpha * dist,
        payload: if loaded {
            f.rated_load_kg * d.gamma * d.lambda * alpha * dist
        } else {
            0.0
        },
        speed: d.beta * d.gamma * d.lambda * dist * u * u,
    }
}

/// Facility treatment pollution of one truck moving `from -> to`: nonzero
/// only for production-to-processing legs, any fleet.
pub fn facility_term(scenario: &Scenario, from: usize, to: usize, fleet: usize) -> f64 {
    if scenario.sites[from].kind == SiteKind::Production
        && scenario.sites[to].kind == SiteKind::Processing
    {
        treatment_pollution(
            scenario.sites[to].pollution_factor,
            scenario.fleets[fleet].rated_load_kg,
        )
    } else {
        0.0
    }
}

/// Pollution index of a solved schedule, decomposed by source.
pub fn pollution_index(
    solution: &FlowSolution,
    scenario: &Scenario,
) -> Result<PollutionBreakdown, EmissionsError> {
    let n = scenario.sites.len();
    let mut acc = PollutionBreakdown::default();
    for entry in solution.entries() {
        if entry.from >= n || entry.to >= n {
            return Err(EmissionsError::DimensionMismatch(format!(
                "arc {} -> {} references a site outside the scenario",
                entry.from, entry.to
            )));
        }
        if entry.fleet >= scenario.fleets.len() {
            return Err(EmissionsError::DimensionMismatch(format!(
                "fleet index {} outside the scenario",
                entry.fleet
            )));
        }
        if entry.class == ArcClass::Service {
            continue;
        }
        let flow = entry.flow as f64;
        let loaded = entry.class == ArcClass::FullyLoaded;
        let t = transport_terms(scenario, entry.from, entry.to, entry.fleet, loaded);
        acc.engine_term += t.engine * flow;
        acc.unladen_term += t.unladen * flow;
        acc.payload_term += t.payload * flow;
        acc.speed_term += t.speed * flow;
        acc.facility_term += facility_term(scenario, entry.from, entry.to, entry.fleet) * flow;
    }
    Ok(acc.close())
}
