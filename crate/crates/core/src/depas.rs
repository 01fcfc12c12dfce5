//! The DEPAS decision core.
//!
//! Every node runs [`decide`] once per cycle on its own estimate of the
//! average system load. Below `L0 - delta` it removes itself with
//! probability `(L0 - L*) / L0`. Above `L0 + delta` it computes
//! `((L* - L0) / L0) * (C_self / C_add)`, adds the integer part as new nodes
//! of capacity `C_add` and one more with probability equal to the
//! fractional part. Summed over all nodes, the expected capacity removed or
//! added equals the capacity that brings the average load back to `L0`,
//! whatever the mix of node capacities and whatever type each node adds.

use thiserror::Error;

use crate::engine::RngStream;
use crate::Capacity;

#[derive(Debug, Error, PartialEq)]
pub enum DepasError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("invalid scaler configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalerConfig {
    /// Seconds between two decisions of the same node.
    pub cycle_period: f64,
    /// Desired load `L0`.
    pub desired_load: f64,
    /// Half-width `delta` of the dead zone around `L0`.
    pub load_variation: f64,
}

impl Default for ScalerConfig {
    fn default() -> Self {
        Self {
            cycle_period: 60.0,
            desired_load: 0.7,
            load_variation: 0.1,
        }
    }
}

impl ScalerConfig {
    pub fn validate(&self) -> Result<(), DepasError> {
        let (l0, delta) = (self.desired_load, self.load_variation);
        if !(l0 > 0.0 && l0 < 1.0) {
            return Err(DepasError::InvalidConfig(format!("desired load {l0} not in (0, 1)")));
        }
        if !(delta > 0.0 && self.lower_threshold() > 0.0 && self.upper_threshold() < 1.0) {
            return Err(DepasError::InvalidConfig(format!(
                "load variation {delta} must keep L0 - delta and L0 + delta inside (0, 1)"
            )));
        }
        if !(self.cycle_period > 0.0) {
            return Err(DepasError::InvalidConfig("cycle period must be positive".into()));
        }
        Ok(())
    }

    pub fn lower_threshold(&self) -> f64 {
        self.desired_load - self.load_variation
    }

    pub fn upper_threshold(&self) -> f64 {
        self.desired_load + self.load_variation
    }
}

/// `(L0 - L*) / L0`, defined for `0 <= L* <= L0`.
pub fn removal_prob_indicator(l_star: f64, l0: f64) -> Result<f64, DepasError> {
    if !(l0 > 0.0) {
        return Err(DepasError::InvalidArgument("desired load must be positive"));
    }
    if !(l_star >= 0.0 && l_star <= l0) {
        return Err(DepasError::InvalidArgument("removal needs 0 <= L* <= L0"));
    }
    Ok((l0 - l_star) / l0)
}

/// `((L* - L0) / L0) * (C_self / C_add)`, defined for `L* >= L0`.
pub fn addition_prob_indicator(l_star: f64, l0: f64, c_self: f64, c_add: f64) -> Result<f64, DepasError> {
    if !(c_self > 0.0 && c_add > 0.0) {
        return Err(DepasError::InvalidArgument("capacities must be positive"));
    }
    Ok(legacy_addition_prob_indicator(l_star, l0)? * (c_self / c_add))
}

/// The homogeneous-system indicator `(L* - L0) / L0`. It only allocates the
/// optimal capacity in expectation when the capacities the nodes would add
/// sum to the current total capacity.
pub fn legacy_addition_prob_indicator(l_star: f64, l0: f64) -> Result<f64, DepasError> {
    if !(l0 > 0.0) {
        return Err(DepasError::InvalidArgument("desired load must be positive"));
    }
    if !(l_star >= l0) || !l_star.is_finite() {
        return Err(DepasError::InvalidArgument("addition needs L* >= L0"));
    }
    Ok((l_star - l0) / l0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalingDecision {
    RemoveSelf,
    NoOp,
    /// Add `count >= 1` nodes of the given capacity.
    Add { count: u32, capacity: Capacity },
}

impl ScalingDecision {
    pub fn added_capacity(&self) -> f64 {
        match *self {
            ScalingDecision::Add { count, capacity } => count as f64 * capacity as f64,
            _ => 0.0,
        }
    }
}

/// Which addition indicator a decision uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdditionRule {
    #[default]
    CapacityRatio,
    Legacy,
}

/// One DEPAS decision for a node of capacity `c_self` whose load estimate
/// is `l_star`; `c_add` is the capacity of the node type to provision.
pub fn decide(
    l_star: f64,
    config: &ScalerConfig,
    c_self: Capacity,
    c_add: Capacity,
    rng: &mut RngStream,
) -> ScalingDecision {
    decide_with(AdditionRule::CapacityRatio, l_star, config, c_self, c_add, rng)
}

/// [`decide`] with a selectable addition indicator. Actions happen when the
/// uniform draw is below the probability.
pub fn decide_with(
    rule: AdditionRule,
    l_star: f64,
    config: &ScalerConfig,
    c_self: Capacity,
    c_add: Capacity,
    rng: &mut RngStream,
) -> ScalingDecision {
    let l0 = config.desired_load;
    let l_star = l_star.max(0.0);
    if l_star <= config.lower_threshold() {
        let p = removal_prob_indicator(l_star, l0).expect("L* below threshold");
        if rng.uniform() < p {
            return ScalingDecision::RemoveSelf;
        }
        return ScalingDecision::NoOp;
    }
    if l_star >= config.upper_threshold() {
        let pi = match rule {
            AdditionRule::CapacityRatio => addition_prob_indicator(l_star, l0, c_self as f64, c_add as f64),
            AdditionRule::Legacy => legacy_addition_prob_indicator(l_star, l0),
        }
        .expect("L* above threshold and capacities positive");
        let whole = pi.floor();
        let mut count = whole as u32;
        if rng.uniform() < pi - whole {
            count += 1;
        }
        if count >= 1 {
            return ScalingDecision::Add {
                count,
                capacity: c_add,
            };
        }
    }
    ScalingDecision::NoOp
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeType {
    pub label: String,
    pub capacity: Capacity,
}

/// Which node type to provision, by simulated time.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvisioningPolicy {
    schedule: Vec<(f64, NodeType)>,
}

impl ProvisioningPolicy {
    /// The first entry must start at time 0, later entries strictly after
    /// their predecessor.
    pub fn new(schedule: Vec<(f64, NodeType)>) -> Result<Self, DepasError> {
        match schedule.first() {
            None => return Err(DepasError::InvalidConfig("provisioning policy is empty".into())),
            Some((t, _)) if *t != 0.0 => {
                return Err(DepasError::InvalidConfig(format!(
                    "first provisioning entry must start at 0, starts at {t}"
                )))
            }
            _ => {}
        }
        if schedule.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(DepasError::InvalidConfig(
                "provisioning times must strictly increase".into(),
            ));
        }
        if let Some((_, ty)) = schedule.iter().find(|(_, ty)| ty.capacity == 0) {
            return Err(DepasError::InvalidConfig(format!("node type {} has zero capacity", ty.label)));
        }
        Ok(Self { schedule })
    }

    pub fn single(node_type: NodeType) -> Result<Self, DepasError> {
        Self::new(vec![(0.0, node_type)])
    }

    pub fn schedule(&self) -> &[(f64, NodeType)] {
        &self.schedule
    }

    /// The latest entry with `from_time <= now`.
    pub fn node_type_at(&self, now: f64) -> &NodeType {
        let i = self.schedule.partition_point(|(t, _)| *t <= now);
        &self.schedule[i.saturating_sub(1)].1
    }

    pub fn provisioning_capacity(&self, now: f64) -> Capacity {
        self.node_type_at(now).capacity
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn removal_indicator_examples() {
        assert!(close(removal_prob_indicator(0.35, 0.7).unwrap(), 0.5));
        assert_eq!(removal_prob_indicator(0.7, 0.7).unwrap(), 0.0);
        assert_eq!(removal_prob_indicator(0.0, 0.7).unwrap(), 1.0);
        assert!(removal_prob_indicator(0.8, 0.7).is_err());
    }

    #[test]
    fn addition_indicator_examples() {
        assert!(close(addition_prob_indicator(1.4, 0.7, 1.0, 5.0).unwrap(), 0.2));
        assert!(close(addition_prob_indicator(1.4, 0.7, 5.0, 1.0).unwrap(), 5.0));
        assert_eq!(addition_prob_indicator(0.7, 0.7, 3.0, 8.0).unwrap(), 0.0);
        assert!(addition_prob_indicator(1.4, 0.7, 0.0, 1.0).is_err());
        assert!(addition_prob_indicator(1.4, 0.7, 1.0, -1.0).is_err());
    }

    #[test]
    fn legacy_indicator_examples() {
        assert!(close(legacy_addition_prob_indicator(1.4, 0.7).unwrap(), 1.0));
        assert_eq!(legacy_addition_prob_indicator(0.7, 0.7).unwrap(), 0.0);
        for c in [1.0, 5.0, 9.0] {
            assert_eq!(
                legacy_addition_prob_indicator(1.1, 0.7).unwrap(),
                addition_prob_indicator(1.1, 0.7, c, c).unwrap()
            );
        }
    }

    #[test]
    fn dead_zone_is_a_no_op() {
        let cfg = ScalerConfig::default();
        let mut rng = RngStream::new(0, 0);
        for l in [0.61, 0.65, 0.7, 0.79] {
            for _ in 0..100 {
                assert_eq!(decide(l, &cfg, 1, 5, &mut rng), ScalingDecision::NoOp);
            }
        }
    }

    #[test]
    fn addition_frequency() {
        let cfg = ScalerConfig::default();
        let mut rng = RngStream::new(1, 0);
        let n = 100_000;
        let added: f64 = (0..n)
            .map(|_| match decide(1.4, &cfg, 1, 5, &mut rng) {
                ScalingDecision::Add { count, capacity } => {
                    assert_eq!(capacity, 5);
                    count as f64
                }
                ScalingDecision::NoOp => 0.0,
                ScalingDecision::RemoveSelf => panic!("removal above threshold"),
            })
            .sum();
        let mean = added / n as f64;
        assert!((mean - 0.2).abs() < 0.004, "{mean}");
    }

    #[test]
    fn supra_unitary_indicator_adds_integer_part_for_sure() {
        let cfg = ScalerConfig::default();
        let mut rng = RngStream::new(2, 0);
        for _ in 0..1000 {
            match decide(1.4, &cfg, 5, 1, &mut rng) {
                ScalingDecision::Add { count, .. } => assert_eq!(count, 5),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn removal_frequency() {
        let cfg = ScalerConfig::default();
        let mut rng = RngStream::new(3, 0);
        let n = 100_000;
        let removed = (0..n)
            .filter(|_| decide(0.35, &cfg, 1, 5, &mut rng) == ScalingDecision::RemoveSelf)
            .count();
        let f = removed as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.005, "{f}");
        // A completely idle node always leaves.
        assert!((0..1000).all(|_| decide(0.0, &cfg, 1, 5, &mut rng) == ScalingDecision::RemoveSelf));
    }

    #[test]
    fn policy_lookup() {
        let low = NodeType {
            label: "low".into(),
            capacity: 1,
        };
        let high = NodeType {
            label: "high".into(),
            capacity: 5,
        };
        let policy = ProvisioningPolicy::new(vec![(0.0, high.clone()), (1100.0, low.clone())]).unwrap();
        assert_eq!(policy.provisioning_capacity(500.0), 5);
        assert_eq!(policy.provisioning_capacity(1099.0), 5);
        assert_eq!(policy.provisioning_capacity(1100.0), 1);
        let single = ProvisioningPolicy::single(low.clone()).unwrap();
        assert_eq!(single.provisioning_capacity(1e9), 1);
        assert!(ProvisioningPolicy::new(vec![]).is_err());
        assert!(ProvisioningPolicy::new(vec![(10.0, low.clone())]).is_err());
        assert!(ProvisioningPolicy::new(vec![(0.0, low.clone()), (0.0, high)]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ScalerConfig::default().validate().is_ok());
        let bad = |l0, delta| ScalerConfig {
            desired_load: l0,
            load_variation: delta,
            ..ScalerConfig::default()
        };
        assert!(bad(1.0, 0.1).validate().is_err());
        assert!(bad(0.7, 0.0).validate().is_err());
        assert!(bad(0.7, 0.3).validate().is_err());
        assert!(bad(0.2, 0.2).validate().is_err());
    }

    proptest! {
        #[test]
        fn no_op_iff_inside_dead_zone(l in 0.0f64..3.0, seed in 0u64..1000) {
            let cfg = ScalerConfig::default();
            let inside = l > cfg.lower_threshold() && l < cfg.upper_threshold();
            let mut rng = RngStream::new(seed, 0);
            let d = decide(l, &cfg, 1, 1, &mut rng);
            if inside {
                prop_assert_eq!(d, ScalingDecision::NoOp);
                prop_assert_eq!(rng.draws(), 0);
            } else {
                // Outside the dead zone the node always draws.
                prop_assert_eq!(rng.draws(), 1);
            }
        }

        #[test]
        fn addition_indicator_monotone(
            l in 0.7f64..3.0, dl in 1e-3f64..1.0,
            c_self in 1.0f64..10.0, c_add in 1.0f64..10.0, dc in 1e-3f64..5.0,
        ) {
            let base = addition_prob_indicator(l, 0.7, c_self, c_add).unwrap();
            let more_load = addition_prob_indicator(l + dl, 0.7, c_self, c_add).unwrap();
            prop_assert!(more_load > base);
            if l > 0.7 {
                let bigger_add = addition_prob_indicator(l, 0.7, c_self, c_add + dc).unwrap();
                prop_assert!(bigger_add < base);
            }
        }
    }
}
