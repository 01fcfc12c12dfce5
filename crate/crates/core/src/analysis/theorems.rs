//! Expected-capacity checks for the scaling rule.
//!
//! The analytic checks sum the action probabilities over randomized node
//! sets; the Monte-Carlo checks run single decision cycles through
//! [`decide_with`] and compare the mean added capacity with the optimum.

use std::fmt;

use crate::depas::{
    addition_prob_indicator, decide_with, legacy_addition_prob_indicator, removal_prob_indicator, AdditionRule,
    ScalerConfig, ScalingDecision,
};
use crate::engine::RngStream;
use crate::Capacity;

use super::optimal_capacity_delta;

/// Relative error allowed by the analytic identities.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;
/// Monte-Carlo estimates must lie within this many standard errors.
pub const STANDARD_ERRORS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub estimate: f64,
    pub expected: f64,
    /// Relative error bound for analytic checks, absolute bound otherwise.
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: estimate {:.6} expected {:.6} (tolerance {:.3e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.estimate,
            self.expected,
            self.tolerance
        )
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

fn analytic(name: &str, worst: f64, estimate: f64, expected: f64) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        estimate,
        expected,
        tolerance: IDENTITY_TOLERANCE,
        passed: worst <= IDENTITY_TOLERANCE,
    }
}

fn random_capacities(n: usize, max: Capacity, rng: &mut RngStream) -> Vec<Capacity> {
    (0..n).map(|_| 1 + rng.below(max as usize) as Capacity).collect()
}

/// Σ p_i·C_i for removal at a shared exact load.
pub fn expected_removed_capacity(capacities: &[Capacity], load: f64, l0: f64) -> f64 {
    let p = removal_prob_indicator(load, l0).expect("load in [0, L0]");
    capacities.iter().map(|&c| p * c as f64).sum()
}

/// Σ p_i·C_add_i for addition at a shared exact load.
pub fn expected_added_capacity(nodes: &[(Capacity, Capacity)], load: f64, l0: f64, rule: AdditionRule) -> f64 {
    nodes
        .iter()
        .map(|&(c, add)| {
            let p = match rule {
                AdditionRule::CapacityRatio => addition_prob_indicator(load, l0, c as f64, add as f64),
                AdditionRule::Legacy => legacy_addition_prob_indicator(load, l0),
            }
            .expect("load at or above L0");
            p * add as f64
        })
        .sum()
}

/// Expected removed capacity equals the optimum over `sets` random node
/// sets of up to `max_n` nodes with capacities in `1..=10`.
pub fn removal_identity(sets: usize, max_n: usize, config: &ScalerConfig, rng: &mut RngStream) -> CheckOutcome {
    let l0 = config.desired_load;
    let (mut worst, mut last) = (0.0f64, (0.0, 0.0));
    for _ in 0..sets {
        let n = 1 + rng.below(max_n);
        let caps = random_capacities(n, 10, rng);
        let load = rng.uniform() * config.lower_threshold();
        let total: f64 = caps.iter().map(|&c| c as f64).sum();
        let got = expected_removed_capacity(&caps, load, l0);
        let want = optimal_capacity_delta(load, l0, total).expect("positive L0");
        worst = worst.max(relative_error(got, want));
        last = (got, want);
    }
    analytic("removal identity", worst, last.0, last.1)
}

/// Expected added capacity equals the optimum for arbitrary per-node
/// provisioning capacities.
pub fn addition_identity(sets: usize, max_n: usize, config: &ScalerConfig, rng: &mut RngStream) -> CheckOutcome {
    let l0 = config.desired_load;
    let (mut worst, mut last) = (0.0f64, (0.0, 0.0));
    for _ in 0..sets {
        let n = 1 + rng.below(max_n);
        let caps = random_capacities(n, 10, rng);
        let adds = random_capacities(n, 10, rng);
        let nodes: Vec<(Capacity, Capacity)> = caps.iter().copied().zip(adds).collect();
        let load = config.upper_threshold() + rng.uniform() * 2.0;
        let total: f64 = caps.iter().map(|&c| c as f64).sum();
        let got = expected_added_capacity(&nodes, load, l0, AdditionRule::CapacityRatio);
        let want = -optimal_capacity_delta(load, l0, total).expect("positive L0");
        worst = worst.max(relative_error(got, want));
        last = (got, want);
    }
    analytic("addition identity", worst, last.0, last.1)
}

/// Mean and standard error of the capacity added by `nodes` in one cycle
/// at the shared exact `load`, over `trials` independent cycles.
pub fn simulate_addition(
    nodes: &[(Capacity, Capacity)],
    load: f64,
    config: &ScalerConfig,
    rule: AdditionRule,
    trials: usize,
    rng: &mut RngStream,
) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let added: f64 = nodes
            .iter()
            .map(|&(c, add)| match decide_with(rule, load, config, c, add, rng) {
                d @ ScalingDecision::Add { .. } => d.added_capacity(),
                _ => 0.0,
            })
            .sum();
        sum += added;
        sum_sq += added * added;
    }
    let t = trials as f64;
    let mean = sum / t;
    let var = ((sum_sq - t * mean * mean) / (t - 1.0)).max(0.0);
    (mean, (var / t).sqrt())
}

fn monte_carlo(name: &str, (mean, se): (f64, f64), expected: f64) -> CheckOutcome {
    let tolerance = (STANDARD_ERRORS * se).max(IDENTITY_TOLERANCE * expected.abs());
    CheckOutcome {
        name: name.to_string(),
        estimate: mean,
        expected,
        tolerance,
        passed: (mean - expected).abs() <= tolerance,
    }
}

/// `n` nodes with capacities alternating 1, 5 and provisioning capacities
/// alternating 1, 5 every second node, so all four pairings occur.
pub fn mixed_nodes(n: usize) -> Vec<(Capacity, Capacity)> {
    const PAIR: [Capacity; 2] = [1, 5];
    (0..n).map(|i| (PAIR[i % 2], PAIR[(i / 2) % 2])).collect()
}

fn total_capacity(nodes: &[(Capacity, Capacity)]) -> f64 {
    nodes.iter().map(|&(c, _)| c as f64).sum()
}

/// Heterogeneous single-cycle addition at load 1.4: the mean added capacity
/// matches the optimum, which is the whole current capacity.
pub fn addition_monte_carlo(n: usize, trials: usize, config: &ScalerConfig, rng: &mut RngStream) -> CheckOutcome {
    let nodes = mixed_nodes(n);
    let load = 2.0 * config.desired_load;
    let want = -optimal_capacity_delta(load, config.desired_load, total_capacity(&nodes)).expect("positive L0");
    let got = simulate_addition(&nodes, load, config, AdditionRule::CapacityRatio, trials, rng);
    monte_carlo("addition monte-carlo", got, want)
}

/// The legacy indicator at load 1.5·L0 when every node would add `factor`
/// times its own capacity. Returns the analytic and the Monte-Carlo checks
/// against `factor` times the optimum.
pub fn legacy_checks(
    n: usize,
    factor: Capacity,
    trials: usize,
    config: &ScalerConfig,
    rng: &mut RngStream,
) -> [CheckOutcome; 2] {
    let nodes: Vec<(Capacity, Capacity)> = mixed_nodes(n).into_iter().map(|(c, _)| (c, factor * c)).collect();
    let load = 1.5 * config.desired_load;
    let c_opt = -optimal_capacity_delta(load, config.desired_load, total_capacity(&nodes)).expect("positive L0");
    let want = factor as f64 * c_opt;
    let exact = expected_added_capacity(&nodes, load, config.desired_load, AdditionRule::Legacy);
    let name = format!("legacy indicator, sum of additions = {factor}C");
    [
        analytic(&format!("{name}, analytic"), relative_error(exact, want), exact, want),
        monte_carlo(
            &format!("{name}, monte-carlo"),
            simulate_addition(&nodes, load, config, AdditionRule::Legacy, trials, rng),
            want,
        ),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteParams {
    pub seed: u64,
    pub identity_sets: usize,
    pub identity_max_n: usize,
    pub mc_nodes: usize,
    pub mc_trials: usize,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self {
            seed: 1,
            identity_sets: 100,
            identity_max_n: 10_000,
            mc_nodes: 1000,
            mc_trials: 10_000,
        }
    }
}

/// Every expected-capacity check with independent random streams.
pub fn run_suite(params: &SuiteParams) -> Vec<CheckOutcome> {
    let config = ScalerConfig::default();
    let stream = |id| RngStream::new(params.seed, id);
    let mut out = vec![
        removal_identity(params.identity_sets, params.identity_max_n, &config, &mut stream(1)),
        addition_identity(params.identity_sets, params.identity_max_n, &config, &mut stream(2)),
        addition_monte_carlo(params.mc_nodes, params.mc_trials, &config, &mut stream(3)),
    ];
    out.extend(legacy_checks(params.mc_nodes, 2, params.mc_trials, &config, &mut stream(4)));
    out.extend(legacy_checks(params.mc_nodes, 1, params.mc_trials, &config, &mut stream(5)));
    out
}
