//! Per-node load measurement and the neighborhood estimate of the average
//! system load.
//!
//! Load is the rate of requests a node processed or rejected, divided by its
//! capacity. It exceeds 1 when the node rejects work. The system load is the
//! capacity-weighted mean of node loads.

use thiserror::Error;

use crate::overlay::NeighborDescriptor;
use crate::Capacity;

#[derive(Debug, Error, PartialEq)]
pub enum MonitoringError {
    #[error("capacity must be positive")]
    NonPositiveCapacity,
    #[error("window length must be positive")]
    EmptyWindow,
    #[error("no nodes to average over")]
    NoNodes,
}

/// Counts for one tumbling monitoring window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadWindow {
    pub start: f64,
    pub processed: u64,
    pub rejected: u64,
}

impl LoadWindow {
    pub fn starting_at(start: f64) -> Self {
        Self {
            start,
            ..Self::default()
        }
    }
}

/// `((processed + rejected) / window_length) / capacity`.
pub fn node_load(processed: u64, rejected: u64, window_length: f64, capacity: Capacity) -> Result<f64, MonitoringError> {
    if capacity == 0 {
        return Err(MonitoringError::NonPositiveCapacity);
    }
    if !(window_length > 0.0) {
        return Err(MonitoringError::EmptyWindow);
    }
    Ok((processed + rejected) as f64 / window_length / capacity as f64)
}

/// Capacity-weighted mean over the node itself and the neighbors that have
/// reported a load. Falls back to the node's own load with no such neighbor.
pub fn estimate_system_load(self_load: f64, self_capacity: Capacity, neighbors: &[NeighborDescriptor]) -> f64 {
    let (mut weighted, mut total) = (self_load * self_capacity as f64, self_capacity as f64);
    for d in neighbors {
        if let Some(load) = d.load {
            weighted += load * d.capacity as f64;
            total += d.capacity as f64;
        }
    }
    if total > 0.0 {
        weighted / total
    } else {
        self_load
    }
}

/// Exact capacity-weighted average load over `(load, capacity)` pairs.
pub fn true_system_load(nodes: impl IntoIterator<Item = (f64, Capacity)>) -> Result<f64, MonitoringError> {
    let (mut weighted, mut total, mut count) = (0.0, 0.0, 0usize);
    for (load, capacity) in nodes {
        weighted += load * capacity as f64;
        total += capacity as f64;
        count += 1;
    }
    if count == 0 {
        return Err(MonitoringError::NoNodes);
    }
    if !(total > 0.0) {
        return Err(MonitoringError::NonPositiveCapacity);
    }
    Ok(weighted / total)
}
