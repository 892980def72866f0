//! Evaluation figures comparing the no-subsidy baseline, the pollution
//! bound, and the designed subsidy scheme: pollution reduction rate, gap
//! above the bound, and how much of the subsidy actually bought pollution
//! reduction rather than extra carrier profit.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("runs were made on different scenarios: {0} vs {1}")]
    ScenarioMismatch(String, String),
    #[error("baseline pollution is zero; reduction rate undefined")]
    ZeroBaseline,
    #[error("bound pollution is zero; gap undefined")]
    ZeroBound,
}

/// Outcomes of the three runs a full evaluation needs, all on the same
/// scenario content hash.
#[derive(Debug, Clone, Serialize)]
pub struct RunTriple {
    pub scenario_hash: String,
    /// Baseline: negated profit objective, pollution, negated revenue.
    pub baseline_objective: f64,
    pub baseline_profit: f64,
    pub baseline_f1: f64,
    pub baseline_f2: f64,
    /// Pollution bound run.
    pub bound_f1: f64,
    /// Designed scheme.
    pub designed_f1: f64,
    pub designed_f2: f64,
    pub designed_profit: f64,
}

impl RunTriple {
    pub fn check_same_scenario(&self, other_hash: &str) -> Result<(), MetricsError> {
        if self.scenario_hash != other_hash {
            return Err(MetricsError::ScenarioMismatch(
                self.scenario_hash.clone(),
                other_hash.to_string(),
            ));
        }
        Ok(())
    }
}

/// Pollution reduction of the designed scheme against the baseline, in
/// percent of the baseline.
pub fn ropr(f1_baseline: f64, f1_designed: f64) -> Result<f64, MetricsError> {
    if f1_baseline == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((f1_baseline - f1_designed) / f1_baseline * 100.0)
}

/// Excess of the designed scheme's pollution over the coordinated bound, in
/// percent of the bound.
pub fn gap_f1(f1_designed: f64, f1_bound: f64) -> Result<f64, MetricsError> {
    if f1_bound == 0.0 {
        return Err(MetricsError::ZeroBound);
    }
    Ok((f1_designed - f1_bound) / f1_bound * 100.0)
}

/// Share of the subsidy that did not merely raise carrier profit, in
/// percent. `None` when no subsidy was spent at all. Profits enter as
/// profits (positive good); the F2 arguments are the minimized objectives
/// (negated revenue).
pub fn esr(
    f2_designed: f64,
    f2_baseline: f64,
    profit_designed: f64,
    profit_baseline: f64,
) -> Option<f64> {
    let subsidy = (f2_designed - f2_baseline).abs();
    if subsidy == 0.0 {
        return None;
    }
    let profit_shift = (profit_designed - profit_baseline).abs();
    Some((subsidy - profit_shift) / subsidy * 100.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct SubsidyDecomposition {
    pub total_subsidy: f64,
    pub ineffective: f64,
    pub effective: f64,
    /// Set when the profit shift exceeded the subsidy, which means the
    /// scheme fed profit rather than pollution reduction.
    pub anomalous: bool,
}

/// Split the subsidy into the part absorbed by carrier profit and the rest.
pub fn subsidy_decomposition(triple: &RunTriple) -> SubsidyDecomposition {
    let total = (triple.designed_f2 - triple.baseline_f2).abs();
    let ineffective = (triple.designed_profit - triple.baseline_profit).abs();
    let effective = total - ineffective;
    SubsidyDecomposition {
        total_subsidy: total,
        ineffective,
        effective,
        anomalous: effective < 0.0,
    }
}

/// Full metrics bundle serialized into `metrics.json`.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub ropr_pct: f64,
    pub gap_f1_pct: f64,
    pub esr_pct: Option<f64>,
    pub decomposition: SubsidyDecomposition,
    pub inputs: RunTriple,
}

pub fn metrics_report(triple: &RunTriple) -> Result<MetricsReport, MetricsError> {
    Ok(MetricsReport {
        ropr_pct: ropr(triple.baseline_f1, triple.designed_f1)?,
        gap_f1_pct: gap_f1(triple.designed_f1, triple.bound_f1)?,
        esr_pct: esr(
            triple.designed_f2,
            triple.baseline_f2,
            triple.designed_profit,
            triple.baseline_profit,
        ),
        decomposition: subsidy_decomposition(triple),
        inputs: triple.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reduction_rate_reference_values() {
        assert_relative_eq!(
            ropr(11_723.23, 8_265.56).unwrap(),
            29.49,
            epsilon = 0.005
        );
        assert_relative_eq!(
            ropr(11_723.23, 8_142.39).unwrap(),
            30.54,
            epsilon = 0.005
        );
        assert_eq!(ropr(5.0, 5.0).unwrap(), 0.0);
        assert!(ropr(0.0, 1.0).is_err());
    }

    #[test]
    fn gap_reference_value_and_scale_invariance() {
        assert_relative_eq!(
            gap_f1(8_265.56, 8_142.39).unwrap(),
            1.51,
            epsilon = 0.005
        );
        assert_eq!(gap_f1(7.0, 7.0).unwrap(), 0.0);
        let a = gap_f1(8_265.56, 8_142.39).unwrap();
        let b = gap_f1(8_265.56 * 3.5, 8_142.39 * 3.5).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-9);
        assert!(gap_f1(1.0, 0.0).is_err());
    }

    #[test]
    fn esr_reference_value_and_edges() {
        let v = esr(6_655.17, -35_375.00, 232_032.87, 230_242.50).unwrap();
        assert_relative_eq!(v, 95.74, epsilon = 0.005);
        // Whole subsidy absorbed by profit: zero effectiveness.
        assert_eq!(esr(-100.0, 0.0, 1100.0, 1000.0), Some(0.0));
        // Profit unchanged: fully effective.
        assert_eq!(esr(-100.0, 0.0, 1000.0, 1000.0), Some(100.0));
        // No subsidy spent: undefined, not a number.
        assert_eq!(esr(-50.0, -50.0, 1000.0, 1000.0), None);
    }

    fn triple() -> RunTriple {
        RunTriple {
            scenario_hash: "fnv1a:test".into(),
            baseline_objective: -230_242.50,
            baseline_profit: 230_242.50,
            baseline_f1: 11_723.23,
            baseline_f2: -35_375.00,
            bound_f1: 8_142.39,
            designed_f1: 8_265.56,
            designed_f2: 6_655.17,
            designed_profit: 232_032.87,
        }
    }

    #[test]
    fn decomposition_reference_values() {
        let d = subsidy_decomposition(&triple());
        assert_relative_eq!(d.total_subsidy, 42_030.17, epsilon = 1e-9);
        assert_relative_eq!(d.ineffective, 1_790.37, epsilon = 1e-9);
        assert_relative_eq!(d.effective, 40_239.80, epsilon = 1e-9);
        assert!(!d.anomalous);
    }

    #[test]
    fn decomposition_zero_subsidy() {
        let mut t = triple();
        t.designed_f2 = t.baseline_f2;
        t.designed_profit = t.baseline_profit;
        let d = subsidy_decomposition(&t);
        assert_eq!(d.total_subsidy, 0.0);
        assert_eq!(d.ineffective, 0.0);
        assert_eq!(d.effective, 0.0);
    }

    #[test]
    fn scenario_hash_mismatch_is_an_error() {
        let t = triple();
        assert!(t.check_same_scenario("fnv1a:test").is_ok());
        assert!(t.check_same_scenario("fnv1a:other").is_err());
    }

    #[test]
    fn report_bundles_everything() {
        let r = metrics_report(&triple()).unwrap();
        assert_relative_eq!(r.ropr_pct, 29.49, epsilon = 0.005);
        assert_relative_eq!(r.gap_f1_pct, 1.51, epsilon = 0.005);
        assert_relative_eq!(r.esr_pct.unwrap(), 95.74, epsilon = 0.005);
    }
}
