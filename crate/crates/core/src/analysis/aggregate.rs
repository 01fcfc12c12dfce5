//! Mean and standard deviation of metrics across independent runs.

use std::io::{self, Write};

use rayon::prelude::*;

use super::metrics::{fmt_value, MetricsRecord};
use super::run_scenario;
use super::scenario::Scenario;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSeries {
    /// Field names in [`MetricsRecord::all_columns`] order.
    pub columns: Vec<String>,
    /// Number of CSV columns at the head of `columns`.
    pub csv_len: usize,
    pub runs: usize,
    pub times: Vec<f64>,
    /// `mean[sample][column]`.
    pub mean: Vec<Vec<f64>>,
    /// Sample standard deviation; zero for a single run.
    pub std: Vec<Vec<f64>>,
}

impl AggregateSeries {
    pub fn from_runs(type_labels: &[&str], runs: &[Vec<MetricsRecord>]) -> Self {
        assert!(!runs.is_empty(), "aggregation needs at least one run");
        let columns = MetricsRecord::all_columns(type_labels);
        let csv_len = MetricsRecord::csv_columns(type_labels).len();
        let times: Vec<f64> = runs[0].iter().map(|r| r.time).collect();
        for run in runs {
            let t: Vec<f64> = run.iter().map(|r| r.time).collect();
            assert_eq!(t, times, "runs disagree on sample times");
        }
        let r = runs.len() as f64;
        let mut mean = Vec::with_capacity(times.len());
        let mut std = Vec::with_capacity(times.len());
        for s in 0..times.len() {
            let rows: Vec<Vec<f64>> = runs.iter().map(|run| run[s].values()).collect();
            let m: Vec<f64> = (0..columns.len())
                .map(|c| rows.iter().map(|row| row[c]).sum::<f64>() / r)
                .collect();
            let d: Vec<f64> = (0..columns.len())
                .map(|c| {
                    if runs.len() < 2 {
                        return 0.0;
                    }
                    let ss: f64 = rows.iter().map(|row| (row[c] - m[c]).powi(2)).sum();
                    (ss / (r - 1.0)).sqrt()
                })
                .collect();
            mean.push(m);
            std.push(d);
        }
        Self {
            columns,
            csv_len,
            runs: runs.len(),
            times,
            mean,
            std,
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Per-sample means of one column.
    pub fn mean_of(&self, name: &str) -> Vec<f64> {
        let c = self.column_index(name).unwrap_or_else(|| panic!("unknown column {name}"));
        self.mean.iter().map(|row| row[c]).collect()
    }

    pub fn std_of(&self, name: &str) -> Vec<f64> {
        let c = self.column_index(name).unwrap_or_else(|| panic!("unknown column {name}"));
        self.std.iter().map(|row| row[c]).collect()
    }

    /// `time`, then `<column>_mean,<column>_std` for every other CSV column.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let mut header = vec!["time".to_string()];
        for c in &self.columns[1..self.csv_len] {
            header.push(format!("{c}_mean"));
            header.push(format!("{c}_std"));
        }
        writeln!(out, "{}", header.join(","))?;
        for (s, &t) in self.times.iter().enumerate() {
            let mut row = vec![fmt_value(t)];
            for c in 1..self.csv_len {
                row.push(fmt_value(self.mean[s][c]));
                row.push(fmt_value(self.std[s][c]));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Runs seeds `base_seed .. base_seed + runs` in parallel and aggregates them.
pub fn aggregate_runs(scenario: &Scenario, runs: usize, base_seed: u64) -> AggregateSeries {
    assert!(runs >= 1, "aggregation needs at least one run");
    let series: Vec<Vec<MetricsRecord>> = (0..runs as u64)
        .into_par_iter()
        .map(|k| {
            let mut s = scenario.clone();
            s.seed = base_seed + k;
            run_scenario(&s)
        })
        .collect();
    AggregateSeries::from_runs(&scenario.type_labels(), &series)
}
