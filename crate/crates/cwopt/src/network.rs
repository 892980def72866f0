//! Time-space network over (site, period) nodes.
//!
//! Arcs come in three classes: fully loaded trips, empty (deadheading)
//! trips, and one-interval service dwells at a site. Which site pairs admit
//! which class is fixed by the site kinds; everything else is structurally
//! zero and never materialized. Arc storage is compressed per (site pair,
//! class) with a departure-period range rather than one record per period.

use std::io::Write;

use serde::Serialize;

use crate::scenario::{Scenario, SiteKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArcClass {
    FullyLoaded,
    Deadheading,
    Service,
}

impl ArcClass {
    pub fn label(self) -> &'static str {
        match self {
            ArcClass::FullyLoaded => "fully_loaded",
            ArcClass::Deadheading => "deadheading",
            ArcClass::Service => "service",
        }
    }
}

/// Movement class admitted between two site kinds, if any.
///
/// Loaded trips run production -> backfill, production -> processing, and
/// processing -> backfill. Empty trips run depot -> (processing | production),
/// (processing | backfill) -> depot, backfill -> (processing | production),
/// and processing -> production. Every other pair is structurally zero; in
/// particular trucks never run empty out of a production site and never
/// visit backfill sites empty.
pub fn arc_class(from: SiteKind, to: SiteKind) -> Option<ArcClass> {
    use ArcClass::*;
    use SiteKind::*;
    match (from, to) {
        (Production, Backfill) => Some(FullyLoaded),
        (Production, Processing) => Some(FullyLoaded),
        (Processing, Backfill) => Some(FullyLoaded),
        (Depot, Processing) | (Depot, Production) => Some(Deadheading),
        (Processing, Depot) | (Backfill, Depot) => Some(Deadheading),
        (Backfill, Processing) | (Backfill, Production) => Some(Deadheading),
        (Processing, Production) => Some(Deadheading),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TsNode {
    pub site: usize,
    pub period: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsArc {
    pub from: TsNode,
    pub to: TsNode,
    pub class: ArcClass,
    pub duration: u32,
}

/// One admissible site pair with its class, travel time, and the departure
/// periods for which the arrival stays inside the horizon.
#[derive(Debug, Clone)]
pub struct PairSpec {
    pub from: usize,
    pub to: usize,
    pub class: ArcClass,
    pub duration: u32,
    /// Departure periods `first..=last`; empty when `duration` exceeds the
    /// horizon.
    pub departures: Option<(u32, u32)>,
}

impl PairSpec {
    pub fn departure_count(&self) -> usize {
        match self.departures {
            Some((a, b)) => (b - a + 1) as usize,
            None => 0,
        }
    }

    pub fn departure_iter(&self) -> impl Iterator<Item = u32> {
        let (a, b) = match self.departures {
            Some(r) => r,
            None => (1, 0),
        };
        a..=b
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ArcCensus {
    pub fully_loaded: usize,
    pub deadheading: usize,
    pub service: usize,
}

impl ArcCensus {
    pub fn total(&self) -> usize {
        self.fully_loaded + self.deadheading + self.service
    }
}

#[derive(Debug, Clone)]
pub struct TimeSpaceNetwork {
    pub horizon: u32,
    pub virtual_horizon: u32,
    pub site_count: usize,
    /// Admissible movement pairs, ordered by (from, to).
    pub pairs: Vec<PairSpec>,
    /// Non-depot sites carrying service arcs, ascending.
    pub service_sites: Vec<usize>,
}

impl TimeSpaceNetwork {
    /// All (site, period) nodes, the virtual look-back periods included.
    pub fn node_count(&self) -> usize {
        self.site_count * (self.horizon as usize + self.virtual_horizon as usize + 1)
    }

    pub fn census(&self) -> ArcCensus {
        let mut c = ArcCensus::default();
        for p in &self.pairs {
            match p.class {
                ArcClass::FullyLoaded => c.fully_loaded += p.departure_count(),
                ArcClass::Deadheading => c.deadheading += p.departure_count(),
                ArcClass::Service => unreachable!("pairs hold movements only"),
            }
        }
        c.service = self.service_sites.len() * self.horizon as usize;
        c
    }

    pub fn arc_count(&self) -> usize {
        self.census().total()
    }

    /// Share of the complete directed graph over all nodes that was pruned
    /// away structurally.
    pub fn pruning_ratio(&self) -> f64 {
        let complete = (self.node_count() as f64).powi(2);
        1.0 - self.arc_count() as f64 / complete
    }

    pub fn arcs(&self) -> impl Iterator<Item = TsArc> + '_ {
        let movements = self.pairs.iter().flat_map(|p| {
            p.departure_iter().map(move |t| TsArc {
                from: TsNode {
                    site: p.from,
                    period: t as i64,
                },
                to: TsNode {
                    site: p.to,
                    period: (t + p.duration) as i64,
                },
                class: p.class,
                duration: p.duration,
            })
        });
        let horizon = self.horizon;
        let services = self.service_sites.iter().flat_map(move |&site| {
            (0..horizon).map(move |t| TsArc {
                from: TsNode {
                    site,
                    period: t as i64,
                },
                to: TsNode {
                    site,
                    period: (t + 1) as i64,
                },
                class: ArcClass::Service,
                duration: 1,
            })
        });
        movements.chain(services)
    }

    pub fn out_arcs(&self, node: TsNode) -> Vec<TsArc> {
        self.arcs()
            .filter(|a| a.from == node)
            .collect()
    }

    pub fn in_arcs(&self, node: TsNode) -> Vec<TsArc> {
        self.arcs()
            .filter(|a| a.to == node)
            .collect()
    }

    /// Diagnostic edge list: `from_site,from_t,to_site,to_t,class`.
    pub fn write_edge_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "from_site,from_t,to_site,to_t,class")?;
        for arc in self.arcs() {
            writeln!(
                w,
                "{},{},{},{},{}",
                arc.from.site,
                arc.from.period,
                arc.to.site,
                arc.to.period,
                arc.class.label()
            )?;
        }
        Ok(())
    }
}

/// Build the support graph for a validated scenario: classify every site
/// pair, drop inadmissible ones, and keep only departures whose arrival
/// stays inside the horizon.
pub fn build_network(scenario: &Scenario) -> TimeSpaceNetwork {
    let n = scenario.sites.len();
    let horizon = scenario.horizon.intervals;
    let mut pairs = Vec::new();
    for from in 0..n {
        for to in 0..n {
            if from == to {
                continue;
            }
            let Some(class) = arc_class(scenario.sites[from].kind, scenario.sites[to].kind)
            else {
                continue;
            };
            let duration = scenario.travel_intervals_between(from, to);
            let departures = if duration <= horizon {
                Some((0, horizon - duration))
            } else {
                None
            };
            pairs.push(PairSpec {
                from,
                to,
                class,
                duration,
                departures,
            });
        }
    }
    let service_sites = scenario
        .sites
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind != SiteKind::Depot)
        .map(|(i, _)| i)
        .collect();
    TimeSpaceNetwork {
        horizon,
        virtual_horizon: scenario.virtual_horizon(),
        site_count: n,
        pairs,
        service_sites,
    }
}
