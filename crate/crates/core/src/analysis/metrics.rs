//! Sampled metrics and their CSV form.

use std::io::{self, Write};

/// One sample of a run.
///
/// Only the leading fields up to `rejected` are written to CSV; the rest
/// are kept for in-process checks.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub time: f64,
    /// Capacity of the active (non-draining) workers.
    pub total_capacity: f64,
    /// Optimal capacity at load `L0 + delta`.
    pub c_opt_lo: f64,
    /// Optimal capacity at load `L0`.
    pub c_opt_mid: f64,
    /// Optimal capacity at load `L0 - delta`.
    pub c_opt_hi: f64,
    pub n_total: usize,
    /// Active workers per node type, in catalog order.
    pub n_per_type: Vec<usize>,
    /// Capacity-weighted mean of the last window loads of active workers;
    /// NaN before any window closed.
    pub true_load: f64,
    pub offered_rate: f64,
    /// Requests completed since the previous sample.
    pub completed: u64,
    /// Requests rejected since the previous sample.
    pub rejected: u64,
    /// Capacity added since the previous sample.
    pub added_capacity: f64,
    /// Capacity removed since the previous sample.
    pub removed_capacity: f64,
    /// Relative standard deviation of overlay in-degrees over active workers.
    pub in_degree_cv: f64,
    pub overlay_connected: bool,
    /// Descriptors in active views pointing at departed or draining workers.
    pub stale_descriptors: usize,
    /// Mean absolute gap between workers' neighborhood estimates and `true_load`.
    pub estimate_error: f64,
}

impl MetricsRecord {
    pub fn csv_columns(type_labels: &[&str]) -> Vec<String> {
        let mut cols: Vec<String> = ["time", "total_capacity", "c_opt_lo", "c_opt_mid", "c_opt_hi", "n_total"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        cols.extend(type_labels.iter().map(|l| format!("n_{l}")));
        cols.extend(["true_load", "offered_rate", "completed", "rejected"].iter().map(|s| s.to_string()));
        cols
    }

    /// CSV columns followed by the in-process extras.
    pub fn all_columns(type_labels: &[&str]) -> Vec<String> {
        let mut cols = Self::csv_columns(type_labels);
        cols.extend(
            [
                "added_capacity",
                "removed_capacity",
                "in_degree_cv",
                "overlay_connected",
                "stale_descriptors",
                "estimate_error",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        cols
    }

    /// Values in [`Self::all_columns`] order.
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![
            self.time,
            self.total_capacity,
            self.c_opt_lo,
            self.c_opt_mid,
            self.c_opt_hi,
            self.n_total as f64,
        ];
        v.extend(self.n_per_type.iter().map(|&n| n as f64));
        v.extend([
            self.true_load,
            self.offered_rate,
            self.completed as f64,
            self.rejected as f64,
            self.added_capacity,
            self.removed_capacity,
            self.in_degree_cv,
            if self.overlay_connected { 1.0 } else { 0.0 },
            self.stale_descriptors as f64,
            self.estimate_error,
        ]);
        v
    }
}

/// Writes the header and one row per record.
pub fn write_csv<W: Write>(out: &mut W, type_labels: &[&str], records: &[MetricsRecord]) -> io::Result<()> {
    let cols = MetricsRecord::csv_columns(type_labels);
    writeln!(out, "{}", cols.join(","))?;
    for r in records {
        let values = r.values();
        let row: Vec<String> = values[..cols.len()].iter().map(|v| fmt_value(*v)).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Shortest round-trip decimal form.
pub(crate) fn fmt_value(v: f64) -> String {
    format!("{v}")
}
