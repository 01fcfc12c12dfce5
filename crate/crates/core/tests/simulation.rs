//! Whole-simulation invariants on small scenarios.

use depas::analysis::run_scenario;
use depas::analysis::scenario::Scenario;
use depas::sim::Simulation;

const RAMP: &str = r#"
    seed = 3
    horizon = 900
    [scaler]
    decision_delay = 5
    [types]
    small = 1
    big = 4
    [initial]
    small = 30
    [policy]
    schedule = [{ from = 0, type = "big" }, { from = 400, type = "small" }]
    [track]
    steps = [[0, 21.0], [200, 60.0], [500, 30.0], [700, 10.0]]
"#;

fn ramp() -> Scenario {
    Scenario::from_toml(RAMP).unwrap()
}

#[test]
fn first_sample_of_default_scenario() {
    let mut sim = Simulation::new(Scenario::default_scenario());
    sim.run_until(0.0);
    let r = &sim.records()[0];
    assert_eq!(r.time, 0.0);
    assert_eq!(r.n_per_type, vec![100, 0]);
    assert_eq!(r.total_capacity, 100.0);
    assert_eq!(r.offered_rate, 70.0);
    assert!((r.c_opt_mid - 100.0).abs() < 1e-9);
}

#[test]
fn capacity_accounting_and_oracle_consistency() {
    let scenario = ramp();
    let caps: Vec<f64> = scenario.types.iter().map(|t| t.capacity as f64).collect();
    let records = run_scenario(&scenario);
    assert_eq!(records.len(), 91);
    for r in &records {
        let summed: f64 = r.n_per_type.iter().zip(&caps).map(|(&n, c)| n as f64 * c).sum();
        assert_eq!(r.total_capacity, summed, "t={}", r.time);
        assert_eq!(r.n_total, r.n_per_type.iter().sum::<usize>());
        assert_eq!(r.offered_rate, scenario.track.rate_at(r.time));
        assert!((r.c_opt_mid - r.offered_rate / 0.7).abs() <= 1e-9 * r.c_opt_mid.max(1.0));
        assert!(r.c_opt_lo <= r.c_opt_mid && r.c_opt_mid <= r.c_opt_hi);
    }
    // The ramp forces both growth and shrinkage.
    let max = records.iter().map(|r| r.total_capacity).fold(0.0, f64::max);
    assert!(max > 30.0);
    assert!(records.last().unwrap().total_capacity < max);
}

#[test]
fn requests_are_conserved_after_drain() {
    let mut sim = Simulation::new(ramp());
    sim.run();
    assert!(sim.requests().in_flight() > 0);
    assert!(sim.drain(600.0), "requests still in flight: {:?}", sim.requests());
    let t = sim.requests();
    assert_eq!(t.issued, t.completed + t.rejected);
    let per_worker: u64 = sim.workers().iter().map(|w| w.counters().completed).sum();
    assert_eq!(per_worker, t.completed);
    let worker_rejections: u64 = sim.workers().iter().map(|w| w.counters().rejected).sum();
    assert_eq!(worker_rejections + t.rejected_at_entry, t.rejected);
    assert!(sim.workers().iter().filter(|w| !sim.is_active(w.id)).all(|w| w.is_idle()));
}

#[test]
fn every_active_worker_is_known_to_the_overlay() {
    let mut sim = Simulation::new(ramp());
    sim.run_until(450.0);
    assert!(sim.scaling().nodes_added > 0);
    let active = sim.active_nodes();
    for &node in &active {
        let referenced = active
            .iter()
            .any(|&other| other != node && sim.workers()[other.0 as usize].view.contains(node));
        assert!(referenced, "{node} unreachable in the overlay");
    }
    assert!(sim.records().iter().all(|r| r.overlay_connected));
}

#[test]
fn entry_view_holds_only_live_workers_after_reshuffle() {
    let mut sim = Simulation::new(ramp());
    for k in 0..=7 {
        sim.run_until(120.0 * k as f64);
        for &(node, _) in sim.entry_view().known() {
            assert!(sim.is_active(node), "t={}: {node} in entry view", sim.now());
        }
    }
}

const IDLE: &str = r#"
    seed = 4
    horizon = 200
    [scaler]
    min_workers = 3
    [types]
    unit = 1
    [initial]
    unit = 40
    [policy]
    schedule = [{ from = 0, type = "unit" }]
    [track]
    steps = [[0, 1e-9]]
"#;

#[test]
fn zero_workload_shrinks_to_the_floor() {
    let mut sim = Simulation::new(Scenario::from_toml(IDLE).unwrap());
    sim.run();
    let last = sim.records().last().unwrap();
    assert_eq!(last.n_total, 3);
    assert_eq!(sim.scaling().nodes_added, 0);
    assert_eq!(sim.scaling().nodes_removed, 37);
    // Views below the degree never heal, so dead links may linger at the floor.
    assert!(last.overlay_connected);
    assert_eq!(sim.requests().issued, 0);
}

#[test]
fn scaling_disabled_keeps_the_population() {
    let mut scenario = ramp();
    scenario.scaling.enabled = false;
    let records = run_scenario(&scenario);
    assert!(records.iter().all(|r| r.n_total == 30));
}

#[test]
fn provisioning_follows_the_policy_schedule() {
    let mut sim = Simulation::new(ramp());
    sim.run();
    for w in sim.workers().iter().skip(30) {
        let label = &sim.scenario().types[sim.worker_type(w.id)].label;
        let expected = if w.born_at < 400.0 { "big" } else { "small" };
        assert_eq!(label, expected, "{} born at {}", w.id, w.born_at);
    }
}

#[test]
fn boot_delay_postpones_new_workers() {
    let mut scenario = ramp();
    scenario.scaling.boot_delay = 7.0;
    let mut sim = Simulation::new(scenario);
    sim.run();
    let added: Vec<f64> = sim.workers().iter().skip(30).map(|w| w.born_at).collect();
    assert!(!added.is_empty());
    // Decisions happen at k*60 + 5, so creations land at k*60 + 12.
    for t in added {
        assert!(((t - 12.0) / 60.0).fract().abs() < 1e-9, "born at {t}");
    }
}
