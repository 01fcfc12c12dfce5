//! The assembled simulator: one client, one entry point and a self-scaling
//! population of workers running gossip, load monitoring and DEPAS.

use crate::analysis::metrics::MetricsRecord;
use crate::analysis::optimal_capacity;
use crate::analysis::scenario::{Scenario, WindowAlignment};
use crate::depas::{decide, ScalingDecision};
use crate::engine::{Engine, EntityId, Event, EventKind, RngStream, TraceEntry};
use crate::monitoring::{estimate_system_load, true_system_load};
use crate::overlay::{
    gossip_exchange, in_degree_stats, is_weakly_connected, join_view, pair_mut, stale_descriptors,
    NeighborDescriptor, View,
};
use crate::traffic::{next_arrival_time, Dispatch, EntryPointView, Request};
use crate::worker::{Admission, WorkerNode};
use crate::{Capacity, NodeId};

const CLIENT_STREAM: u64 = 1;
const ENTRY_STREAM: u64 = 2;
const BOOTSTRAP_STREAM: u64 = 3;
const WORKER_STREAM_BASE: u64 = 1 << 32;

const CLIENT: EntityId = EntityId(0);
const ENTRY_POINT: EntityId = EntityId(1);
const SAMPLER: EntityId = EntityId(2);
const WORKER_ENTITY_BASE: u64 = 16;

fn worker_entity(node: NodeId) -> EntityId {
    EntityId(WORKER_ENTITY_BASE + node.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimEvent {
    Arrival,
    Reshuffle,
    Sample,
    Gossip(NodeId),
    WindowClose(NodeId),
    Decision(NodeId),
    Completion(NodeId),
    Provision { creator: NodeId, type_index: usize },
}

impl EventKind for SimEvent {
    fn name(&self) -> &'static str {
        match self {
            SimEvent::Arrival => "arrival",
            SimEvent::Reshuffle => "reshuffle",
            SimEvent::Sample => "sample",
            SimEvent::Gossip(_) => "gossip",
            SimEvent::WindowClose(_) => "window",
            SimEvent::Decision(_) => "decision",
            SimEvent::Completion(_) => "completion",
            SimEvent::Provision { .. } => "provision",
        }
    }
}

/// Request accounting over the whole run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RequestTotals {
    pub issued: u64,
    pub completed: u64,
    /// All rejections, including those at the entry point.
    pub rejected: u64,
    pub rejected_at_entry: u64,
}

impl RequestTotals {
    pub fn in_flight(&self) -> u64 {
        self.issued - self.completed - self.rejected
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScalingTotals {
    pub nodes_added: u64,
    pub nodes_removed: u64,
    pub suppressed_removals: u64,
    /// Gossip rounds skipped because the initiator's view was empty.
    pub isolated_rounds: u64,
    pub decisions: u64,
}

#[derive(Debug, Default)]
struct SampleAccumulator {
    completed: u64,
    rejected: u64,
    added: f64,
    removed: f64,
}

pub struct Simulation {
    scenario: Scenario,
    engine: Engine<SimEvent>,
    workers: Vec<WorkerNode>,
    worker_type: Vec<usize>,
    /// Next decision instant per worker.
    next_decision: Vec<f64>,
    /// Active (accepting work, gossiping, deciding) per worker.
    alive: Vec<bool>,
    active: usize,
    entry: EntryPointView,
    client_rng: RngStream,
    entry_rng: RngStream,
    bootstrap_rng: RngStream,
    next_request_id: u64,
    arrivals_open: bool,
    requests: RequestTotals,
    scaling: ScalingTotals,
    acc: SampleAccumulator,
    next_sample: u64,
    records: Vec<MetricsRecord>,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Self {
        let seed = scenario.seed;
        let mut sim = Self {
            engine: Engine::new(),
            workers: Vec::new(),
            worker_type: Vec::new(),
            next_decision: Vec::new(),
            alive: Vec::new(),
            active: 0,
            entry: EntryPointView::default(),
            client_rng: RngStream::new(seed, CLIENT_STREAM),
            entry_rng: RngStream::new(seed, ENTRY_STREAM),
            bootstrap_rng: RngStream::new(seed, BOOTSTRAP_STREAM),
            next_request_id: 0,
            arrivals_open: true,
            requests: RequestTotals::default(),
            scaling: ScalingTotals::default(),
            acc: SampleAccumulator::default(),
            next_sample: 0,
            records: Vec::new(),
            scenario,
        };
        sim.populate();
        sim
    }

    /// Records every dispatched event from now on.
    pub fn enable_trace(&mut self) {
        self.engine.enable_trace();
    }

    pub fn trace(&self) -> Option<&[TraceEntry]> {
        self.engine.trace()
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn now(&self) -> f64 {
        self.engine.now()
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<MetricsRecord> {
        self.records
    }

    pub fn requests(&self) -> &RequestTotals {
        &self.requests
    }

    pub fn scaling(&self) -> &ScalingTotals {
        &self.scaling
    }

    pub fn workers(&self) -> &[WorkerNode] {
        &self.workers
    }

    pub fn worker_type(&self, node: NodeId) -> usize {
        self.worker_type[node.0 as usize]
    }

    pub fn is_active(&self, node: NodeId) -> bool {
        self.alive.get(node.0 as usize).copied().unwrap_or(false)
    }

    pub fn active_nodes(&self) -> Vec<NodeId> {
        (0..self.workers.len())
            .filter(|&i| self.alive[i])
            .map(|i| NodeId(i as u64))
            .collect()
    }

    pub fn active_capacity(&self) -> u64 {
        self.workers
            .iter()
            .zip(&self.alive)
            .filter(|(_, &a)| a)
            .map(|(w, _)| w.capacity as u64)
            .sum()
    }

    pub fn entry_view(&self) -> &EntryPointView {
        &self.entry
    }

    /// Values drawn from every random stream of the run so far.
    pub fn total_draws(&self) -> u64 {
        self.client_rng.draws()
            + self.entry_rng.draws()
            + self.bootstrap_rng.draws()
            + self.workers.iter().map(|w| w.rng.draws()).sum::<u64>()
    }

    fn populate(&mut self) {
        let degree = self.scenario.overlay.degree;
        let initial: Vec<usize> = self
            .scenario
            .initial
            .iter()
            .flat_map(|&(t, n)| std::iter::repeat_n(t, n))
            .collect();
        let n = initial.len();
        let capacities: Vec<Capacity> = initial.iter().map(|&t| self.scenario.types[t].capacity).collect();
        for (i, &t) in initial.iter().enumerate() {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let k = degree.min(others.len());
            for a in 0..k {
                let b = a + self.bootstrap_rng.below(others.len() - a);
                others.swap(a, b);
            }
            let id = NodeId(i as u64);
            let view = View::with_entries(
                id,
                degree,
                others[..k]
                    .iter()
                    .map(|&j| NeighborDescriptor::fresh(NodeId(j as u64), capacities[j], None)),
            );
            let first_decision = self.scenario.scaling.config.cycle_period + self.scenario.scaling.decision_delay;
            self.spawn(id, t, view, 0.0, first_decision);
        }
        self.reshuffle();
        self.engine
            .schedule(self.scenario.entry_point.reshuffle_period, ENTRY_POINT, SimEvent::Reshuffle);
        let first = next_arrival_time(&self.scenario.track, 0.0, &mut self.client_rng);
        self.engine.schedule(first, CLIENT, SimEvent::Arrival);
        self.engine.schedule(0.0, SAMPLER, SimEvent::Sample);
    }

    fn spawn(&mut self, id: NodeId, type_index: usize, view: View, now: f64, first_decision: f64) {
        debug_assert_eq!(id.0 as usize, self.workers.len());
        let capacity = self.scenario.types[type_index].capacity;
        let mut rng = RngStream::new(self.scenario.seed, WORKER_STREAM_BASE + id.0);
        let gossip_phase = rng.uniform() * self.scenario.overlay.cycle_period;
        self.workers.push(WorkerNode::new(id, capacity, view, rng, now));
        self.worker_type.push(type_index);
        self.next_decision.push(first_decision);
        self.alive.push(true);
        self.active += 1;

        let entity = worker_entity(id);
        self.engine.schedule(now + gossip_phase, entity, SimEvent::Gossip(id));
        let period = self.scenario.monitoring.period;
        let window_close = match self.scenario.monitoring.alignment {
            WindowAlignment::Birth => now + period,
            WindowAlignment::Clock => {
                let next = (now / period).ceil() * period;
                if next > now {
                    next
                } else {
                    now + period
                }
            }
        };
        self.engine.schedule(window_close, entity, SimEvent::WindowClose(id));
        if self.scenario.scaling.enabled {
            self.engine.schedule(first_decision, entity, SimEvent::Decision(id));
        }
    }

    /// Runs to the scenario horizon, sampling metrics along the way.
    pub fn run(&mut self) {
        let horizon = self.scenario.horizon;
        self.run_until(horizon);
    }

    pub fn run_until(&mut self, end: f64) {
        while let Some(event) = self.engine.next_before(end) {
            self.handle(event);
        }
        self.engine.advance_to(end).expect("run end is not in the past");
    }

    /// Stops the client and processes events until no request is in flight
    /// or `max_extra` seconds have passed. Returns whether everything drained.
    pub fn drain(&mut self, max_extra: f64) -> bool {
        self.arrivals_open = false;
        let end = self.engine.now() + max_extra;
        while self.requests.in_flight() > 0 {
            let Some(event) = self.engine.next_before(end) else { break };
            self.handle(event);
        }
        self.requests.in_flight() == 0
    }

    fn handle(&mut self, event: Event<SimEvent>) {
        let now = event.fire_time;
        match event.kind {
            SimEvent::Arrival => self.on_arrival(now),
            SimEvent::Reshuffle => {
                self.reshuffle();
                self.engine
                    .schedule_in(self.scenario.entry_point.reshuffle_period, ENTRY_POINT, SimEvent::Reshuffle);
            }
            SimEvent::Sample => self.on_sample(now),
            SimEvent::Gossip(node) => self.on_gossip(node),
            SimEvent::WindowClose(node) => {
                let i = node.0 as usize;
                if self.alive[i] {
                    self.workers[i].close_window(now);
                    self.engine
                        .schedule_in(self.scenario.monitoring.period, event.target, SimEvent::WindowClose(node));
                }
            }
            SimEvent::Decision(node) => self.depas_cycle(node, now),
            SimEvent::Completion(node) => {
                let i = node.0 as usize;
                self.requests.completed += 1;
                self.acc.completed += 1;
                if !self.workers[i].complete() {
                    self.start_executions(node);
                }
            }
            SimEvent::Provision { creator, type_index } => self.provision(creator, type_index, now),
        }
    }

    fn reshuffle(&mut self) {
        let candidates: Vec<(NodeId, Capacity)> = self
            .workers
            .iter()
            .zip(&self.alive)
            .filter(|(_, &a)| a)
            .map(|(w, _)| (w.id, w.capacity))
            .collect();
        self.entry = EntryPointView::reshuffle(&candidates, &self.scenario.entry_point, &mut self.entry_rng);
    }

    fn on_arrival(&mut self, now: f64) {
        if !self.arrivals_open {
            return;
        }
        let request = Request {
            id: self.next_request_id,
            issue_time: now,
            hops: 0,
        };
        self.next_request_id += 1;
        self.requests.issued += 1;
        let alive = &self.alive;
        match self.entry.dispatch(&mut self.entry_rng, |n| alive[n.0 as usize]) {
            Dispatch::To(node) => self.deliver(node, request),
            Dispatch::Rejected => {
                self.requests.rejected += 1;
                self.requests.rejected_at_entry += 1;
                self.acc.rejected += 1;
            }
        }
        let next = next_arrival_time(&self.scenario.track, now, &mut self.client_rng);
        self.engine.schedule(next, CLIENT, SimEvent::Arrival);
    }

    /// Hands a request to `node` and follows forwards until it is queued or
    /// rejected. Delivery between workers is instantaneous.
    fn deliver(&mut self, mut node: NodeId, mut request: Request) {
        loop {
            let i = node.0 as usize;
            let alive = &self.alive;
            let outcome = self.workers[i].admit(&mut request, &self.scenario.admission, |n| alive[n.0 as usize]);
            match outcome {
                Admission::Scheduled => {
                    self.start_executions(node);
                    return;
                }
                Admission::Forwarded(next) => node = next,
                Admission::Rejected(_) => {
                    self.requests.rejected += 1;
                    self.acc.rejected += 1;
                    return;
                }
            }
        }
    }

    fn start_executions(&mut self, node: NodeId) {
        let mean = self.scenario.admission.mean_execution_time;
        for (_, service) in self.workers[node.0 as usize].start_executions(mean) {
            self.engine.schedule_in(service, worker_entity(node), SimEvent::Completion(node));
        }
    }

    fn on_gossip(&mut self, node: NodeId) {
        let i = node.0 as usize;
        if !self.alive[i] {
            return;
        }
        self.engine
            .schedule_in(self.scenario.overlay.cycle_period, worker_entity(node), SimEvent::Gossip(node));
        let Some(partner) = self.workers[i].view.oldest().map(|d| d.node) else {
            self.scaling.isolated_rounds += 1;
            return;
        };
        let j = partner.0 as usize;
        if !self.alive[j] {
            // Contact failed: forget the dead link.
            self.workers[i].view.remove(partner);
            return;
        }
        let (a, b) = pair_mut(&mut self.workers, i, j);
        let (a_desc, b_desc) = (a.descriptor(), b.descriptor());
        gossip_exchange(
            &a_desc,
            &mut a.view,
            &b_desc,
            &mut b.view,
            &self.scenario.overlay,
            &mut a.rng,
            &mut b.rng,
        );
    }

    /// One DEPAS cycle of `node`: read its current load estimate, decide and
    /// act, then schedule the next cycle.
    fn depas_cycle(&mut self, node: NodeId, now: f64) {
        let i = node.0 as usize;
        if !self.alive[i] {
            return;
        }
        let setup = &self.scenario.scaling;
        self.next_decision[i] = now + setup.config.cycle_period;
        self.engine
            .schedule(self.next_decision[i], worker_entity(node), SimEvent::Decision(node));

        let worker = &mut self.workers[i];
        if now - worker.born_at < self.scenario.monitoring.period {
            return;
        }
        let Some(own_load) = worker.last_load() else { return };
        let estimate = estimate_system_load(own_load, worker.capacity, worker.view.entries());
        let node_type = self.scenario.policy.node_type_at(now);
        let decision = decide(estimate, &setup.config, worker.capacity, node_type.capacity, &mut worker.rng);
        self.scaling.decisions += 1;
        match decision {
            ScalingDecision::NoOp => {}
            ScalingDecision::RemoveSelf => {
                if self.active <= setup.min_workers || worker.view.is_empty() {
                    self.scaling.suppressed_removals += 1;
                    return;
                }
                worker.remove_self();
                self.alive[i] = false;
                self.active -= 1;
                self.acc.removed += worker.capacity as f64;
                self.scaling.nodes_removed += 1;
            }
            ScalingDecision::Add { count, .. } => {
                let type_index = self
                    .scenario
                    .type_index(&node_type.label)
                    .expect("policy types come from the catalog");
                let boot = setup.boot_delay;
                for _ in 0..count {
                    if boot > 0.0 {
                        self.engine.schedule(
                            now + boot,
                            worker_entity(node),
                            SimEvent::Provision { creator: node, type_index },
                        );
                    } else {
                        self.provision(node, type_index, now);
                    }
                }
            }
        }
    }

    /// Creates a worker bootstrapped from `creator`'s view. The new worker
    /// runs its decisions on the creator's cycle.
    fn provision(&mut self, creator: NodeId, type_index: usize, now: f64) {
        let c = creator.0 as usize;
        let id = NodeId(self.workers.len() as u64);
        let view = join_view(&self.workers[c].descriptor(), &self.workers[c].view, id);
        let period = self.scenario.scaling.config.cycle_period;
        let mut first_decision = self.next_decision[c];
        while first_decision <= now {
            first_decision += period;
        }
        self.spawn(id, type_index, view, now, first_decision);
        self.acc.added += self.scenario.types[type_index].capacity as f64;
        self.scaling.nodes_added += 1;
    }

    fn on_sample(&mut self, now: f64) {
        if !self.arrivals_open {
            return;
        }
        let record = self.snapshot(now);
        self.records.push(record);
        self.acc = SampleAccumulator::default();
        self.next_sample += 1;
        let next = self.next_sample as f64 * self.scenario.sample_period;
        if next <= self.scenario.horizon + 1e-9 {
            self.engine.schedule(next, SAMPLER, SimEvent::Sample);
        }
    }

    /// Metrics at the current instant.
    pub fn snapshot(&self, now: f64) -> MetricsRecord {
        let active: Vec<&WorkerNode> = self
            .workers
            .iter()
            .zip(&self.alive)
            .filter(|(_, &a)| a)
            .map(|(w, _)| w)
            .collect();
        let ids: Vec<NodeId> = active.iter().map(|w| w.id).collect();
        let mut n_per_type = vec![0usize; self.scenario.types.len()];
        for w in &active {
            n_per_type[self.worker_type[w.id.0 as usize]] += 1;
        }
        let total_capacity: f64 = active.iter().map(|w| w.capacity as f64).sum();
        let true_load =
            true_system_load(active.iter().filter_map(|w| w.last_load().map(|l| (l, w.capacity)))).unwrap_or(f64::NAN);
        let estimate_error = if true_load.is_nan() {
            f64::NAN
        } else {
            let gaps: Vec<f64> = active
                .iter()
                .filter_map(|w| {
                    w.last_load()
                        .map(|l| (estimate_system_load(l, w.capacity, w.view.entries()) - true_load).abs())
                })
                .collect();
            gaps.iter().sum::<f64>() / gaps.len() as f64
        };
        let views = active.iter().map(|w| &w.view);
        let in_degree_cv = in_degree_stats(&ids, views.clone())
            .map(|s| s.relative_std_dev())
            .unwrap_or(0.0);
        let cfg = &self.scenario.scaling.config;
        let offered_rate = self.scenario.track.rate_at(now);
        let opt = |target: f64| optimal_capacity(offered_rate, target).expect("thresholds lie in (0, 1)");
        MetricsRecord {
            time: now,
            total_capacity,
            c_opt_lo: opt(cfg.upper_threshold()),
            c_opt_mid: opt(cfg.desired_load),
            c_opt_hi: opt(cfg.lower_threshold()),
            n_total: active.len(),
            n_per_type,
            true_load,
            offered_rate,
            completed: self.acc.completed,
            rejected: self.acc.rejected,
            added_capacity: self.acc.added,
            removed_capacity: self.acc.removed,
            in_degree_cv,
            overlay_connected: is_weakly_connected(&ids, views.clone()),
            stale_descriptors: stale_descriptors(&ids, views),
            estimate_error,
        }
    }
}
