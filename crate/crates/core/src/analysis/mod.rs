//! Scenario files, metrics, the optimal-capacity oracle and multi-run
//! aggregation.

pub mod aggregate;
pub mod metrics;
pub mod scenario;
pub mod theorems;

use thiserror::Error;

use crate::sim::Simulation;
use metrics::MetricsRecord;
use scenario::Scenario;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("target load must lie in (0, 1), got {0}")]
    TargetLoad(f64),
    #[error("workload must be non-negative, got {0}")]
    Workload(f64),
    #[error("desired load must be positive, got {0}")]
    DesiredLoad(f64),
}

/// Capacity at which `workload` runs at exactly `target_load`.
pub fn optimal_capacity(workload: f64, target_load: f64) -> Result<f64, AnalysisError> {
    if !(target_load > 0.0 && target_load < 1.0) {
        return Err(AnalysisError::TargetLoad(target_load));
    }
    if !(workload >= 0.0) {
        return Err(AnalysisError::Workload(workload));
    }
    Ok(workload / target_load)
}

/// Capacity to remove from a system of capacity `capacity` at average load
/// `load` so that the load becomes `desired`. Negative values are additions.
pub fn optimal_capacity_delta(load: f64, desired: f64, capacity: f64) -> Result<f64, AnalysisError> {
    if !(desired > 0.0) {
        return Err(AnalysisError::DesiredLoad(desired));
    }
    Ok((desired - load) / desired * capacity)
}

/// One seeded run of `scenario` to its horizon.
pub fn run_scenario(scenario: &Scenario) -> Vec<MetricsRecord> {
    let mut sim = Simulation::new(scenario.clone());
    sim.run();
    sim.into_records()
}
