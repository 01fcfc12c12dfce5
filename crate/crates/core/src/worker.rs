//! Worker request lifecycle: queue admission, hop-bounded forwarding over
//! the overlay, rejection and parallel execution.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::engine::RngStream;
use crate::monitoring::{node_load, LoadWindow};
use crate::overlay::{NeighborDescriptor, View};
use crate::traffic::{weighted_index, Request};
use crate::{Capacity, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissionConfig {
    /// A request is queued while `queue_len / capacity` is below this.
    pub max_queue_per_capacity: f64,
    pub max_hops: u32,
    pub mean_execution_time: f64,
}

impl Default for AdmissionConfig {
    fn default() -> Self {
        Self {
            max_queue_per_capacity: 3.0,
            max_hops: 10,
            mean_execution_time: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerState {
    Active,
    /// Decided to leave; finishes queued work but accepts nothing new.
    Draining,
    Departed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    HopLimit,
    /// Forwarding needed but no reachable neighbor.
    Isolated,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Admission {
    Scheduled,
    Forwarded(NodeId),
    Rejected(RejectReason),
}

#[derive(Debug, Clone)]
struct Queued(Request);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .issue_time
            .total_cmp(&other.0.issue_time)
            .then(self.0.id.cmp(&other.0.id))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorkerCounters {
    pub completed: u64,
    pub rejected: u64,
    pub forwarded: u64,
}

#[derive(Debug, Clone)]
pub struct WorkerNode {
    pub id: NodeId,
    pub capacity: Capacity,
    pub view: View,
    pub rng: RngStream,
    pub born_at: f64,
    state: WorkerState,
    queue: BinaryHeap<Reverse<Queued>>,
    busy: u32,
    window: LoadWindow,
    last_load: Option<f64>,
    counters: WorkerCounters,
}

impl WorkerNode {
    pub fn new(id: NodeId, capacity: Capacity, view: View, rng: RngStream, born_at: f64) -> Self {
        assert!(capacity > 0, "worker capacity must be positive");
        Self {
            id,
            capacity,
            view,
            rng,
            born_at,
            state: WorkerState::Active,
            queue: BinaryHeap::new(),
            busy: 0,
            window: LoadWindow::starting_at(born_at),
            last_load: None,
            counters: WorkerCounters::default(),
        }
    }

    pub fn state(&self) -> WorkerState {
        self.state
    }

    pub fn is_active(&self) -> bool {
        self.state == WorkerState::Active
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn busy_slots(&self) -> u32 {
        self.busy
    }

    pub fn is_idle(&self) -> bool {
        self.busy == 0 && self.queue.is_empty()
    }

    pub fn counters(&self) -> &WorkerCounters {
        &self.counters
    }

    /// Load measured over the last closed monitoring window.
    pub fn last_load(&self) -> Option<f64> {
        self.last_load
    }

    pub fn window(&self) -> &LoadWindow {
        &self.window
    }

    /// Descriptor this node advertises in gossip.
    pub fn descriptor(&self) -> NeighborDescriptor {
        NeighborDescriptor::fresh(self.id, self.capacity, self.last_load)
    }

    /// Queue the request, forward it to a capacity-weighted neighbor, or
    /// reject it once it has used up its hops. An unreachable forwarding
    /// target is dropped from the view and the pick is retried once.
    pub fn admit(
        &mut self,
        request: &mut Request,
        config: &AdmissionConfig,
        mut reachable: impl FnMut(NodeId) -> bool,
    ) -> Admission {
        debug_assert!(self.is_active(), "{} admitted while {:?}", self.id, self.state);
        debug_assert!(request.hops <= config.max_hops);
        if (self.queue.len() as f64) / (self.capacity as f64) < config.max_queue_per_capacity {
            self.queue.push(Reverse(Queued(request.clone())));
            return Admission::Scheduled;
        }
        if request.hops >= config.max_hops {
            self.record_rejection();
            return Admission::Rejected(RejectReason::HopLimit);
        }
        for _ in 0..2 {
            let Some(i) = weighted_index(self.view.entries(), |d| d.capacity as f64, &mut self.rng) else {
                break;
            };
            let target = self.view.entries()[i].node;
            if reachable(target) {
                request.hops += 1;
                self.counters.forwarded += 1;
                return Admission::Forwarded(target);
            }
            self.view.remove(target);
        }
        self.record_rejection();
        Admission::Rejected(RejectReason::Isolated)
    }

    fn record_rejection(&mut self) {
        self.counters.rejected += 1;
        self.window.rejected += 1;
    }

    /// Moves queued requests into free slots, oldest first. Returns each
    /// started request with its sampled execution time.
    pub fn start_executions(&mut self, mean_execution_time: f64) -> Vec<(Request, f64)> {
        let mut started = Vec::new();
        while self.busy < self.capacity {
            let Some(Reverse(Queued(request))) = self.queue.pop() else { break };
            self.busy += 1;
            let service = self
                .rng
                .exponential(mean_execution_time)
                .expect("mean execution time is positive");
            started.push((request, service));
        }
        started
    }

    /// Frees the slot of a finished request. Returns true when a draining
    /// node has just become idle and can depart.
    pub fn complete(&mut self) -> bool {
        assert!(self.busy > 0, "{} completed a request with no busy slot", self.id);
        self.busy -= 1;
        self.counters.completed += 1;
        self.window.processed += 1;
        if self.state == WorkerState::Draining && self.is_idle() {
            self.state = WorkerState::Departed;
            return true;
        }
        false
    }

    /// Closes the current monitoring window at `now` and opens the next one.
    pub fn close_window(&mut self, now: f64) -> f64 {
        let length = now - self.window.start;
        let load = node_load(self.window.processed, self.window.rejected, length, self.capacity)
            .expect("capacity and window length are positive");
        self.last_load = Some(load);
        self.window = LoadWindow::starting_at(now);
        load
    }

    /// Stops accepting work. Returns true when the node departs immediately
    /// (nothing left to drain).
    pub fn remove_self(&mut self) -> bool {
        if self.state != WorkerState::Active {
            return self.state == WorkerState::Departed;
        }
        self.state = if self.is_idle() {
            WorkerState::Departed
        } else {
            WorkerState::Draining
        };
        self.state == WorkerState::Departed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(capacity: Capacity, neighbors: &[(u64, Capacity)]) -> WorkerNode {
        let view = View::with_entries(
            NodeId(0),
            50,
            neighbors.iter().map(|&(n, c)| NeighborDescriptor::fresh(NodeId(n), c, None)),
        );
        WorkerNode::new(NodeId(0), capacity, view, RngStream::new(1, 0), 0.0)
    }

    fn req(id: u64, t: f64, hops: u32) -> Request {
        Request {
            id,
            issue_time: t,
            hops,
        }
    }

    fn fill(w: &mut WorkerNode, n: usize) {
        for i in 0..n {
            w.queue.push(Reverse(Queued(req(1000 + i as u64, i as f64, 0))));
        }
    }

    #[test]
    fn queue_below_threshold_is_scheduled() {
        let cfg = AdmissionConfig::default();
        let mut w = node(1, &[]);
        fill(&mut w, 2);
        assert_eq!(w.admit(&mut req(1, 0.0, 0), &cfg, |_| true), Admission::Scheduled);

        let mut w = node(5, &[]);
        fill(&mut w, 14);
        assert_eq!(w.admit(&mut req(1, 0.0, 0), &cfg, |_| true), Admission::Scheduled);
        assert_eq!(w.queue_len(), 15);
    }

    #[test]
    fn full_queue_forwards_and_counts_hop() {
        let cfg = AdmissionConfig::default();
        let mut w = node(1, &[(7, 1)]);
        fill(&mut w, 3);
        let mut r = req(1, 0.0, 4);
        assert_eq!(w.admit(&mut r, &cfg, |_| true), Admission::Forwarded(NodeId(7)));
        assert_eq!(r.hops, 5);
        assert_eq!(w.counters().forwarded, 1);
        assert_eq!(w.window().rejected, 0);
    }

    #[test]
    fn hop_limit_rejects() {
        let cfg = AdmissionConfig::default();
        let mut w = node(1, &[(7, 1)]);
        fill(&mut w, 3);
        assert_eq!(
            w.admit(&mut req(1, 0.0, 10), &cfg, |_| true),
            Admission::Rejected(RejectReason::HopLimit)
        );
        assert_eq!(w.window().rejected, 1);
    }

    #[test]
    fn isolated_node_rejects_and_purges_dead_links() {
        let cfg = AdmissionConfig::default();
        let mut w = node(1, &[(7, 1), (8, 1), (9, 1)]);
        fill(&mut w, 3);
        assert_eq!(
            w.admit(&mut req(1, 0.0, 0), &cfg, |_| false),
            Admission::Rejected(RejectReason::Isolated)
        );
        assert_eq!(w.view.len(), 1);
        let mut lonely = node(1, &[]);
        fill(&mut lonely, 3);
        assert_eq!(
            lonely.admit(&mut req(1, 0.0, 0), &cfg, |_| true),
            Admission::Rejected(RejectReason::Isolated)
        );
    }

    #[test]
    fn starts_at_most_capacity_oldest_first() {
        let mut w = node(2, &[]);
        for (id, t) in [(1, 5.0), (2, 1.0), (3, 3.0), (4, 1.0), (5, 0.5)] {
            w.queue.push(Reverse(Queued(req(id, t, 0))));
        }
        let started: Vec<u64> = w.start_executions(1.0).iter().map(|(r, _)| r.id).collect();
        assert_eq!(started, vec![5, 2]);
        assert_eq!(w.queue_len(), 3);
        assert_eq!(w.busy_slots(), 2);
        assert!(w.start_executions(1.0).is_empty());
        w.complete();
        let next: Vec<u64> = w.start_executions(1.0).iter().map(|(r, _)| r.id).collect();
        assert_eq!(next, vec![4]);
    }

    #[test]
    fn removal_drains_queued_work() {
        let mut idle = node(1, &[]);
        assert!(idle.remove_self());
        assert_eq!(idle.state(), WorkerState::Departed);

        let mut w = node(1, &[]);
        for i in 0..3 {
            w.queue.push(Reverse(Queued(req(i, i as f64, 0))));
        }
        w.start_executions(1.0);
        assert!(!w.remove_self());
        assert_eq!(w.state(), WorkerState::Draining);
        let mut done = 0;
        loop {
            done += 1;
            if w.complete() {
                break;
            }
            w.start_executions(1.0);
        }
        assert_eq!(done, 3);
        assert_eq!(w.counters().rejected, 0);
        assert_eq!(w.state(), WorkerState::Departed);
    }

    #[test]
    fn window_close_reports_load() {
        let mut w = node(5, &[]);
        w.window.processed = 150;
        assert_eq!(w.close_window(60.0), 0.5);
        assert_eq!(w.last_load(), Some(0.5));
        assert_eq!(w.window().start, 60.0);
        assert_eq!(w.descriptor().load, Some(0.5));
    }
}
