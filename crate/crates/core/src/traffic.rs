//! Client-side request generation and first-level dispatch at the entry point.

use thiserror::Error;

use crate::engine::RngStream;
use crate::{Capacity, NodeId};

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("no dispatch target available")]
    NoTarget,
    #[error("invalid workload track: {0}")]
    InvalidTrack(String),
}

/// Piecewise-constant mean arrival rate.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadTrack {
    steps: Vec<(f64, f64)>,
}

impl WorkloadTrack {
    /// `steps` are `(start_time, mean_rate)` pairs: the first starts at 0,
    /// start times strictly increase and every rate is positive.
    pub fn new(steps: Vec<(f64, f64)>) -> Result<Self, TrafficError> {
        match steps.first() {
            None => return Err(TrafficError::InvalidTrack("track has no steps".into())),
            Some(&(t, _)) if t != 0.0 => {
                return Err(TrafficError::InvalidTrack(format!(
                    "first step must start at 0, starts at {t}"
                )))
            }
            _ => {}
        }
        if let Some(w) = steps.windows(2).find(|w| !(w[1].0 > w[0].0)) {
            return Err(TrafficError::InvalidTrack(format!(
                "step start times must strictly increase ({} then {})",
                w[0].0, w[1].0
            )));
        }
        if let Some(&(t, r)) = steps.iter().find(|(_, r)| !(*r > 0.0) || !r.is_finite()) {
            return Err(TrafficError::InvalidTrack(format!(
                "rate at t={t} must be positive, got {r}"
            )));
        }
        Ok(Self { steps })
    }

    pub fn constant(rate: f64) -> Result<Self, TrafficError> {
        Self::new(vec![(0.0, rate)])
    }

    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }

    /// Rate of the step active at `t`; a step starting exactly at `t` is active.
    pub fn rate_at(&self, t: f64) -> f64 {
        let i = self.steps.partition_point(|&(start, _)| start <= t);
        self.steps[i.saturating_sub(1)].1
    }

    /// `[start, end)` intervals of constant rate, the last one closed by `horizon`.
    pub fn plateaus(&self, horizon: f64) -> Vec<(f64, f64, f64)> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, &(start, rate))| {
                let end = self.steps.get(i + 1).map_or(horizon, |s| s.0);
                (start, end.min(horizon), rate)
            })
            .filter(|&(start, end, _)| end > start)
            .collect()
    }
}

/// Time of the next client request after `now`, with an exponential gap
/// whose mean is the inverse of the rate active at `now`.
pub fn next_arrival_time(track: &WorkloadTrack, now: f64, rng: &mut RngStream) -> f64 {
    let rate = track.rate_at(now);
    now + rng.exponential(1.0 / rate).expect("track rates are positive")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: u64,
    pub issue_time: f64,
    pub hops: u32,
}

/// Index of an item drawn with probability proportional to its weight.
pub fn weighted_index<T>(items: &[T], weight: impl Fn(&T) -> f64, rng: &mut RngStream) -> Option<usize> {
    let total: f64 = items.iter().map(&weight).sum();
    if items.is_empty() || !(total > 0.0) {
        return None;
    }
    let mut target = rng.uniform() * total;
    for (i, item) in items.iter().enumerate() {
        let w = weight(item);
        if target < w {
            return Some(i);
        }
        target -= w;
    }
    // Rounding can leave a sliver past the last bucket.
    items.iter().rposition(|item| weight(item) > 0.0)
}

/// Capacity-weighted random choice among candidate workers.
pub fn weighted_pick(candidates: &[(NodeId, Capacity)], rng: &mut RngStream) -> Result<NodeId, TrafficError> {
    weighted_index(candidates, |&(_, c)| c as f64, rng)
        .map(|i| candidates[i].0)
        .ok_or(TrafficError::NoTarget)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryPointConfig {
    pub min_neighbors: usize,
    /// Fraction of all workers known, e.g. 0.02.
    pub fraction: f64,
    pub reshuffle_period: f64,
}

impl Default for EntryPointConfig {
    fn default() -> Self {
        Self {
            min_neighbors: 50,
            fraction: 0.02,
            reshuffle_period: 120.0,
        }
    }
}

impl EntryPointConfig {
    pub fn sample_size(&self, total: usize) -> usize {
        let by_fraction = (self.fraction * total as f64).ceil() as usize;
        self.min_neighbors.max(by_fraction).min(total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dispatch {
    To(NodeId),
    /// No reachable worker; the request is rejected at the entry point.
    Rejected,
}

/// Workers currently known to the entry point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntryPointView {
    known: Vec<(NodeId, Capacity)>,
}

impl EntryPointView {
    pub fn known(&self) -> &[(NodeId, Capacity)] {
        &self.known
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.known.iter().any(|&(n, _)| n == node)
    }

    /// Replaces the view with a uniform sample of `all_workers`.
    pub fn reshuffle(all_workers: &[(NodeId, Capacity)], config: &EntryPointConfig, rng: &mut RngStream) -> Self {
        let k = config.sample_size(all_workers.len());
        let mut pool = all_workers.to_vec();
        for i in 0..k {
            let j = i + rng.below(pool.len() - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        Self { known: pool }
    }

    /// Capacity-weighted dispatch. A pick that turns out to be unreachable is
    /// dropped from the view and the pick is retried once.
    pub fn dispatch(&mut self, rng: &mut RngStream, mut reachable: impl FnMut(NodeId) -> bool) -> Dispatch {
        for _ in 0..2 {
            let Ok(node) = weighted_pick(&self.known, rng) else {
                return Dispatch::Rejected;
            };
            if reachable(node) {
                return Dispatch::To(node);
            }
            self.known.retain(|&(n, _)| n != node);
        }
        Dispatch::Rejected
    }
}
