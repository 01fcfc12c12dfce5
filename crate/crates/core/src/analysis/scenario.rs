//! Scenario files.
//!
//! A scenario is a TOML document whose sections mirror the simulator
//! parameter table: `[scaler]`, `[overlay]`, `[admission]`, `[monitoring]`,
//! `[entry_point]`, plus `[types]`, `[initial]`, `[policy]` and `[track]`
//! describing the node catalog, the starting population, the provisioning
//! schedule and the workload. Omitted parameters take the table defaults.

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::Deserialize;
use thiserror::Error;

use crate::depas::{NodeType, ProvisioningPolicy, ScalerConfig};
use crate::overlay::OverlayConfig;
use crate::traffic::{EntryPointConfig, WorkloadTrack};
use crate::worker::AdmissionConfig;
use crate::Capacity;

/// The bundled scenario replaying the heterogeneous dynamic-workload experiment.
pub const DEFAULT_SCENARIO: &str = include_str!("../../scenarios/default.toml");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {message}")]
    Field { field: String, message: String },
}

fn field_error(field: &str, message: impl fmt::Display) -> ScenarioError {
    ScenarioError::Field {
        field: field.to_string(),
        message: message.to_string(),
    }
}

/// Where each node's monitoring windows start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowAlignment {
    /// Windows tile time from the node's creation instant.
    Birth,
    /// Windows tile the shared clock inherited from the initial nodes; a
    /// node created mid-window gets a shorter first window.
    Clock,
}

impl fmt::Display for WindowAlignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowAlignment::Birth => "birth",
            WindowAlignment::Clock => "clock",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitoringConfig {
    pub period: f64,
    pub alignment: WindowAlignment,
}

/// Scaling parameters beyond the decision rule itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSetup {
    pub config: ScalerConfig,
    pub enabled: bool,
    /// Seconds between the close of a monitoring window and the next
    /// decision of the initial nodes; lets fresh load samples spread.
    pub decision_delay: f64,
    /// The simulated provider never removes the last `min_workers` workers.
    pub min_workers: usize,
    /// Boot time of newly provisioned nodes.
    pub boot_delay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub horizon: f64,
    pub sample_period: f64,
    pub scaling: ScalingSetup,
    pub overlay: OverlayConfig,
    pub admission: AdmissionConfig,
    pub monitoring: MonitoringConfig,
    pub entry_point: EntryPointConfig,
    /// Node catalog in declaration order.
    pub types: Vec<NodeType>,
    /// Initial population as `(index into types, count)`.
    pub initial: Vec<(usize, usize)>,
    pub policy: ProvisioningPolicy,
    pub track: WorkloadTrack,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    seed: Option<u64>,
    horizon: Option<f64>,
    sample_period: Option<f64>,
    #[serde(default)]
    scaler: RawScaler,
    #[serde(default)]
    overlay: RawOverlay,
    #[serde(default)]
    admission: RawAdmission,
    #[serde(default)]
    monitoring: RawMonitoring,
    #[serde(default)]
    entry_point: RawEntryPoint,
    types: IndexMap<String, i64>,
    initial: IndexMap<String, i64>,
    policy: RawPolicy,
    track: RawTrack,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScaler {
    cycle: Option<f64>,
    l0: Option<f64>,
    delta: Option<f64>,
    enabled: Option<bool>,
    decision_delay: Option<f64>,
    min_workers: Option<i64>,
    boot_delay: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOverlay {
    degree: Option<i64>,
    cycle: Option<f64>,
    healing: Option<i64>,
    swap: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdmission {
    max_queue_size: Option<f64>,
    max_hops: Option<i64>,
    mean_execution_time: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMonitoring {
    period: Option<f64>,
    alignment: Option<WindowAlignment>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntryPoint {
    min_neighbors: Option<i64>,
    percent_neighbors: Option<f64>,
    reshuffle_period: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    schedule: Vec<RawPolicyEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicyEntry {
    from: f64,
    #[serde(rename = "type")]
    node_type: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrack {
    steps: Vec<(f64, f64)>,
}

fn positive(field: &str, value: f64) -> Result<f64, ScenarioError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(field_error(field, format!("must be positive, got {value}")))
    }
}

fn non_negative(field: &str, value: f64) -> Result<f64, ScenarioError> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(field_error(field, format!("must be non-negative, got {value}")))
    }
}

fn count(field: &str, value: i64, min: i64) -> Result<usize, ScenarioError> {
    if value >= min {
        Ok(value as usize)
    } else {
        Err(field_error(field, format!("must be at least {min}, got {value}")))
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Self::resolve(raw)
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn default_scenario() -> Self {
        Self::from_toml(DEFAULT_SCENARIO).expect("bundled scenario is valid")
    }

    fn resolve(raw: RawScenario) -> Result<Self, ScenarioError> {
        let horizon = positive("horizon", raw.horizon.unwrap_or(2600.0))?;
        let sample_period = positive("sample_period", raw.sample_period.unwrap_or(10.0))?;

        let s = &raw.scaler;
        let scaler = ScalerConfig {
            cycle_period: positive("scaler.cycle", s.cycle.unwrap_or(60.0))?,
            desired_load: s.l0.unwrap_or(0.7),
            load_variation: s.delta.unwrap_or(0.1),
        };
        scaler.validate().map_err(|e| field_error("scaler", e))?;
        let scaling = ScalingSetup {
            config: scaler,
            enabled: s.enabled.unwrap_or(true),
            decision_delay: non_negative("scaler.decision_delay", s.decision_delay.unwrap_or(0.0))?,
            min_workers: count("scaler.min_workers", s.min_workers.unwrap_or(1), 1)?,
            boot_delay: non_negative("scaler.boot_delay", s.boot_delay.unwrap_or(0.0))?,
        };
        if scaling.decision_delay >= scaling.config.cycle_period {
            return Err(field_error("scaler.decision_delay", "must be shorter than the cycle"));
        }

        let o = &raw.overlay;
        let degree = count("overlay.degree", o.degree.unwrap_or(50), 2)?;
        let overlay = OverlayConfig {
            degree,
            healing: count("overlay.healing", o.healing.unwrap_or(degree as i64 / 10), 0)?,
            swap: count("overlay.swap", o.swap.unwrap_or(degree as i64 / 2), 0)?,
            cycle_period: positive("overlay.cycle", o.cycle.unwrap_or(0.5))?,
        };
        overlay.validate().map_err(|e| field_error("overlay", e))?;

        let a = &raw.admission;
        let admission = AdmissionConfig {
            max_queue_per_capacity: positive("admission.max_queue_size", a.max_queue_size.unwrap_or(3.0))?,
            max_hops: count("admission.max_hops", a.max_hops.unwrap_or(10), 0)? as u32,
            mean_execution_time: positive(
                "admission.mean_execution_time",
                a.mean_execution_time.unwrap_or(1.0),
            )?,
        };

        let monitoring = MonitoringConfig {
            period: positive("monitoring.period", raw.monitoring.period.unwrap_or(60.0))?,
            alignment: raw.monitoring.alignment.unwrap_or(WindowAlignment::Clock),
        };

        let e = &raw.entry_point;
        let percent = e.percent_neighbors.unwrap_or(2.0);
        if !(0.0..=100.0).contains(&percent) {
            return Err(field_error("entry_point.percent_neighbors", "must be within [0, 100]"));
        }
        let entry_point = EntryPointConfig {
            min_neighbors: count("entry_point.min_neighbors", e.min_neighbors.unwrap_or(50), 1)?,
            fraction: percent / 100.0,
            reshuffle_period: positive("entry_point.reshuffle_period", e.reshuffle_period.unwrap_or(120.0))?,
        };

        if raw.types.is_empty() {
            return Err(field_error("types", "the node catalog is empty"));
        }
        let mut types = Vec::with_capacity(raw.types.len());
        for (label, &cap) in &raw.types {
            if cap <= 0 || cap > Capacity::MAX as i64 {
                return Err(field_error(&format!("types.{label}"), format!("capacity must be positive, got {cap}")));
            }
            types.push(NodeType {
                label: label.clone(),
                capacity: cap as Capacity,
            });
        }
        let type_index = |field: &str, label: &str| {
            types
                .iter()
                .position(|t| t.label == label)
                .ok_or_else(|| field_error(field, format!("unknown node type `{label}`")))
        };

        let mut initial = Vec::new();
        for (label, &n) in &raw.initial {
            let field = format!("initial.{label}");
            let idx = type_index(&field, label)?;
            initial.push((idx, count(&field, n, 0)?));
        }
        if initial.iter().map(|&(_, n)| n).sum::<usize>() == 0 {
            return Err(field_error("initial", "the initial population is empty"));
        }

        let mut schedule = Vec::new();
        for (i, entry) in raw.policy.schedule.iter().enumerate() {
            let field = format!("policy.schedule[{i}]");
            let idx = type_index(&field, &entry.node_type)?;
            schedule.push((entry.from, types[idx].clone()));
        }
        let policy = ProvisioningPolicy::new(schedule).map_err(|e| field_error("policy.schedule", e))?;

        let track = WorkloadTrack::new(raw.track.steps).map_err(|e| field_error("track.steps", e))?;

        Ok(Self {
            seed: raw.seed.unwrap_or(1),
            horizon,
            sample_period,
            scaling,
            overlay,
            admission,
            monitoring,
            entry_point,
            types,
            initial,
            policy,
            track,
        })
    }

    pub fn type_labels(&self) -> Vec<&str> {
        self.types.iter().map(|t| t.label.as_str()).collect()
    }

    pub fn type_index(&self, label: &str) -> Option<usize> {
        self.types.iter().position(|t| t.label == label)
    }

    /// Human-readable resolved configuration, labelled like the parameter table.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k:<40} {v}\n"));
        line("Seed", self.seed.to_string());
        line("Horizon (s)", self.horizon.to_string());
        line("Sample period (s)", self.sample_period.to_string());
        line("Min no of entry point neighbors", self.entry_point.min_neighbors.to_string());
        line(
            "Percent of entry point neighbors",
            format!("{}%", self.entry_point.fraction * 100.0),
        );
        line(
            "Entry point neighbor reshuffle period",
            format!("{}s", self.entry_point.reshuffle_period),
        );
        line("Overlay degree", self.overlay.degree.to_string());
        line("Overlay management cycle", format!("{}s", self.overlay.cycle_period));
        line("Overlay healing / swap", format!("{} / {}", self.overlay.healing, self.overlay.swap));
        line("Max queue size", self.admission.max_queue_per_capacity.to_string());
        line("Max no of hops", self.admission.max_hops.to_string());
        line("Mean execution time", self.admission.mean_execution_time.to_string());
        line("Load monitoring period", format!("{}s", self.monitoring.period));
        line("Monitoring window alignment", self.monitoring.alignment.to_string());
        line("T (DEPAS cycle duration)", format!("{}s", self.scaling.config.cycle_period));
        line("L0", self.scaling.config.desired_load.to_string());
        line("delta", self.scaling.config.load_variation.to_string());
        line("Scaling enabled", self.scaling.enabled.to_string());
        line("Decision delay after window close", format!("{}s", self.scaling.decision_delay));
        line("Minimum workers", self.scaling.min_workers.to_string());
        for t in &self.types {
            line(&format!("Node type {}", t.label), format!("capacity {}", t.capacity));
        }
        for &(i, n) in &self.initial {
            line(&format!("Initial {}", self.types[i].label), n.to_string());
        }
        for (from, ty) in self.policy.schedule() {
            line(&format!("Provision from {from}s"), ty.label.clone());
        }
        for (start, rate) in self.track.steps() {
            line(&format!("Workload from {start}s"), format!("{rate} req/s"));
        }
        out
    }
}
