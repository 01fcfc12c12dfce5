//! Gossip-based peer sampling over an unstructured overlay.
//!
//! Each worker keeps a bounded partial view of other workers. Views are
//! refreshed by push-pull exchanges with the oldest neighbor; the healing
//! parameter drops the oldest descriptors after every merge (which purges
//! links to dead nodes) and the swap parameter discards the descriptors that
//! were just sent to the partner (which evens out in-degrees).
//!
//! Descriptors piggyback the owner's capacity and most recent load sample,
//! so the neighborhood load estimate needs no messages of its own.

use std::collections::HashSet;

use thiserror::Error;

use crate::engine::RngStream;
use crate::{Capacity, NodeId};

#[derive(Debug, Error, PartialEq)]
pub enum OverlayError {
    #[error("in-degree statistics need at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("invalid overlay configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborDescriptor {
    pub node: NodeId,
    pub capacity: Capacity,
    /// Gossip rounds since the descriptor was created by its owner.
    pub age: u32,
    /// Load the owner measured over its last complete monitoring window, if any.
    pub load: Option<f64>,
}

impl NeighborDescriptor {
    pub fn fresh(node: NodeId, capacity: Capacity, load: Option<f64>) -> Self {
        Self {
            node,
            capacity,
            age: 0,
            load,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayConfig {
    /// Maximum view size.
    pub degree: usize,
    /// Oldest descriptors dropped per merge.
    pub healing: usize,
    /// Sent descriptors dropped per merge.
    pub swap: usize,
    /// Seconds between two active exchanges of the same node.
    pub cycle_period: f64,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self {
            degree: 50,
            healing: 5,
            swap: 25,
            cycle_period: 0.5,
        }
    }
}

impl OverlayConfig {
    pub fn validate(&self) -> Result<(), OverlayError> {
        if self.degree < 2 {
            return Err(OverlayError::InvalidConfig("degree must be at least 2".into()));
        }
        if self.healing + self.swap > self.degree {
            return Err(OverlayError::InvalidConfig(
                "healing + swap must not exceed the degree".into(),
            ));
        }
        if !(self.cycle_period > 0.0) {
            return Err(OverlayError::InvalidConfig("cycle period must be positive".into()));
        }
        Ok(())
    }

    /// Descriptors sent per exchange, including the sender's own.
    pub fn buffer_len(&self) -> usize {
        (self.degree / 2).max(1)
    }
}

/// A bounded partial view. Never contains its owner or duplicate node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    owner: NodeId,
    max_size: usize,
    entries: Vec<NeighborDescriptor>,
}

impl View {
    pub fn new(owner: NodeId, max_size: usize) -> Self {
        Self {
            owner,
            max_size,
            entries: Vec::with_capacity(max_size + max_size / 2 + 1),
        }
    }

    /// Builds a view from descriptors, skipping the owner and duplicates and
    /// truncating to `max_size`.
    pub fn with_entries(
        owner: NodeId,
        max_size: usize,
        entries: impl IntoIterator<Item = NeighborDescriptor>,
    ) -> Self {
        let mut view = Self::new(owner, max_size);
        for d in entries {
            if view.entries.len() == max_size {
                break;
            }
            view.insert(d);
        }
        view
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[NeighborDescriptor] {
        &self.entries
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.entries.iter().any(|d| d.node == node)
    }

    pub fn get(&self, node: NodeId) -> Option<&NeighborDescriptor> {
        self.entries.iter().find(|d| d.node == node)
    }

    /// Inserts a descriptor, keeping the fresher copy on duplicates. Returns
    /// false when it is the owner, a staler duplicate or the view is full.
    pub fn insert(&mut self, d: NeighborDescriptor) -> bool {
        if d.node == self.owner {
            return false;
        }
        if let Some(existing) = self.entries.iter_mut().find(|e| e.node == d.node) {
            if d.age < existing.age {
                *existing = d;
                return true;
            }
            return false;
        }
        if self.entries.len() >= self.max_size {
            return false;
        }
        self.entries.push(d);
        true
    }

    pub fn remove(&mut self, node: NodeId) -> bool {
        match self.entries.iter().position(|d| d.node == node) {
            Some(i) => {
                self.entries.remove(i);
                true
            }
            None => false,
        }
    }

    /// The exchange partner: the descriptor with the highest age (first one
    /// on ties).
    pub fn oldest(&self) -> Option<&NeighborDescriptor> {
        self.entries
            .iter()
            .reduce(|best, d| if d.age > best.age { d } else { best })
    }

    fn check_invariants(&self) {
        debug_assert!(self.entries.len() <= self.max_size);
        debug_assert!(self.entries.iter().all(|d| d.node != self.owner));
        debug_assert!({
            let mut seen = HashSet::new();
            self.entries.iter().all(|d| seen.insert(d.node))
        });
    }

    /// Shuffles the view, moves the `healing` oldest entries to the end and
    /// returns the owner's fresh descriptor followed by the head of the view.
    fn outgoing_buffer(
        &mut self,
        me: &NeighborDescriptor,
        config: &OverlayConfig,
        rng: &mut RngStream,
    ) -> Vec<NeighborDescriptor> {
        rng.shuffle(&mut self.entries);
        let n = self.entries.len();
        for k in 0..config.healing.min(n) {
            let end = n - k;
            // First maximum in shuffled order.
            let (j, _) = self.entries[..end]
                .iter()
                .rev()
                .enumerate()
                .max_by_key(|(_, d)| d.age)
                .expect("non-empty prefix");
            let i = end - 1 - j;
            self.entries[i..end].rotate_left(1);
        }
        let mut buffer = Vec::with_capacity(config.buffer_len());
        buffer.push(NeighborDescriptor {
            age: 0,
            ..me.clone()
        });
        buffer.extend(
            self.entries
                .iter()
                .take(config.buffer_len().saturating_sub(1))
                .cloned(),
        );
        buffer
    }

    /// Merges a received buffer and trims back to `max_size`: duplicates keep
    /// the freshest copy, then the oldest `healing` entries go, then up to
    /// `swap` entries from the head (the ones just sent), then random ones.
    /// Ages of the surviving entries are incremented.
    fn merge(&mut self, received: Vec<NeighborDescriptor>, config: &OverlayConfig, rng: &mut RngStream) {
        // Membership filter over the current entries; a miss skips the scan.
        let mut filter = [0u64; 8];
        let slot = |node: NodeId| (node.0.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 55) as usize;
        for e in &self.entries {
            let b = slot(e.node);
            filter[b / 64] |= 1 << (b % 64);
        }
        for d in received {
            if d.node == self.owner {
                continue;
            }
            let b = slot(d.node);
            let maybe_present = filter[b / 64] & (1 << (b % 64)) != 0;
            match maybe_present.then(|| self.entries.iter().position(|e| e.node == d.node)).flatten() {
                Some(i) if d.age < self.entries[i].age => {
                    self.entries.remove(i);
                    self.entries.push(d);
                }
                Some(_) => {}
                None => {
                    filter[b / 64] |= 1 << (b % 64);
                    self.entries.push(d);
                }
            }
        }

        let c = self.max_size;
        let excess = self.entries.len().saturating_sub(c);
        let h = config.healing.min(excess);
        for _ in 0..h {
            // Last maximum, so freshly appended copies lose ties.
            let (i, _) = self
                .entries
                .iter()
                .enumerate()
                .max_by_key(|(_, d)| d.age)
                .expect("excess implies entries");
            self.entries.remove(i);
        }
        let excess = self.entries.len().saturating_sub(c);
        let s = config.swap.min(excess);
        self.entries.drain(..s);
        while self.entries.len() > c {
            let i = rng.below(self.entries.len());
            self.entries.remove(i);
        }
        for d in &mut self.entries {
            d.age = d.age.saturating_add(1);
        }
        self.check_invariants();
    }
}

/// One push-pull exchange between `initiator` and `responder`. Both sides
/// build their outgoing buffers before either merges.
pub fn gossip_exchange(
    initiator_self: &NeighborDescriptor,
    initiator: &mut View,
    responder_self: &NeighborDescriptor,
    responder: &mut View,
    config: &OverlayConfig,
    initiator_rng: &mut RngStream,
    responder_rng: &mut RngStream,
) {
    debug_assert_eq!(initiator_self.node, initiator.owner);
    debug_assert_eq!(responder_self.node, responder.owner);
    let pushed = initiator.outgoing_buffer(initiator_self, config, initiator_rng);
    let pulled = responder.outgoing_buffer(responder_self, config, responder_rng);
    responder.merge(pushed, config, responder_rng);
    initiator.merge(pulled, config, initiator_rng);
}

/// Initial view of a node created by `creator`: the creator's own
/// descriptor plus its view, dropping the oldest entries to fit.
pub fn join_view(creator_self: &NeighborDescriptor, creator_view: &View, new_node: NodeId) -> View {
    let max_size = creator_view.max_size;
    let mut inherited: Vec<NeighborDescriptor> = creator_view.entries.clone();
    inherited.sort_by_key(|d| d.age);
    let creator = NeighborDescriptor {
        age: 0,
        ..creator_self.clone()
    };
    View::with_entries(
        new_node,
        max_size,
        std::iter::once(creator).chain(inherited.into_iter().filter(|d| d.node != new_node)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InDegreeStats {
    pub mean: f64,
    pub std_dev: f64,
    pub max: usize,
}

impl InDegreeStats {
    /// Coefficient of variation; zero when the mean is zero.
    pub fn relative_std_dev(&self) -> f64 {
        if self.mean > 0.0 {
            self.std_dev / self.mean
        } else {
            0.0
        }
    }
}

/// Population in-degree statistics over `nodes`. The in-degree of a node is
/// the number of the given views containing it.
pub fn in_degree_stats<'a>(
    nodes: &[NodeId],
    views: impl IntoIterator<Item = &'a View>,
) -> Result<InDegreeStats, OverlayError> {
    if nodes.len() < 2 {
        return Err(OverlayError::TooFewNodes(nodes.len()));
    }
    let index = node_index(nodes);
    let mut degree = vec![0usize; nodes.len()];
    for view in views {
        for d in &view.entries {
            if let Ok(i) = index.binary_search_by_key(&d.node, |&(n, _)| n) {
                degree[index[i].1] += 1;
            }
        }
    }
    let n = degree.len() as f64;
    let mean = degree.iter().sum::<usize>() as f64 / n;
    let var = degree.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(InDegreeStats {
        mean,
        std_dev: var.sqrt(),
        max: degree.iter().copied().max().unwrap_or(0),
    })
}

/// Whether the directed graph of `views` restricted to `nodes` is weakly
/// connected. Links to nodes outside `nodes` are ignored.
pub fn is_weakly_connected<'a>(nodes: &[NodeId], views: impl IntoIterator<Item = &'a View>) -> bool {
    if nodes.len() <= 1 {
        return true;
    }
    let index = node_index(nodes);
    let lookup = |id: NodeId| {
        index
            .binary_search_by_key(&id, |&(n, _)| n)
            .ok()
            .map(|i| index[i].1)
    };
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for view in views {
        let Some(a) = lookup(view.owner) else { continue };
        for d in &view.entries {
            if let Some(b) = lookup(d.node) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra] = rb;
                }
            }
        }
    }
    let root = find(&mut parent, 0);
    (1..nodes.len()).all(|i| find(&mut parent, i) == root)
}

/// Descriptors across `views` that point at nodes not in `live`.
pub fn stale_descriptors<'a>(live: &[NodeId], views: impl IntoIterator<Item = &'a View>) -> usize {
    let index = node_index(live);
    views
        .into_iter()
        .flat_map(|v| v.entries.iter())
        .filter(|d| index.binary_search_by_key(&d.node, |&(n, _)| n).is_err())
        .count()
}

fn node_index(nodes: &[NodeId]) -> Vec<(NodeId, usize)> {
    let mut index: Vec<(NodeId, usize)> = nodes.iter().copied().zip(0..).collect();
    index.sort_unstable();
    index
}

/// A static population running gossip rounds, for overlay-only experiments.
///
/// Each round every live node, in a freshly shuffled order, initiates one
/// exchange with its oldest neighbor. A dead partner is dropped from the
/// initiator's view instead of exchanging.
pub struct Membership {
    config: OverlayConfig,
    views: Vec<View>,
    rngs: Vec<RngStream>,
    alive: Vec<bool>,
    order_rng: RngStream,
}

impl Membership {
    /// `n` nodes of unit capacity, each starting with a uniform random view.
    pub fn random(n: usize, config: OverlayConfig, seed: u64) -> Self {
        let mut order_rng = RngStream::new(seed, u64::MAX);
        let mut views = Vec::with_capacity(n);
        for i in 0..n {
            let mut others: Vec<u64> = (0..n as u64).filter(|&j| j != i as u64).collect();
            let k = config.degree.min(others.len());
            for a in 0..k {
                let b = a + order_rng.below(others.len() - a);
                others.swap(a, b);
            }
            views.push(View::with_entries(
                NodeId(i as u64),
                config.degree,
                others[..k].iter().map(|&j| NeighborDescriptor::fresh(NodeId(j), 1, None)),
            ));
        }
        Self {
            rngs: (0..n as u64).map(|i| RngStream::new(seed, i)).collect(),
            alive: vec![true; n],
            views,
            config,
            order_rng,
        }
    }

    pub fn views(&self) -> impl Iterator<Item = &View> {
        self.views.iter().zip(&self.alive).filter(|(_, &a)| a).map(|(v, _)| v)
    }

    pub fn live_nodes(&self) -> Vec<NodeId> {
        (0..self.views.len())
            .filter(|&i| self.alive[i])
            .map(|i| NodeId(i as u64))
            .collect()
    }

    pub fn kill(&mut self, node: NodeId) {
        self.alive[node.0 as usize] = false;
    }

    pub fn round(&mut self) {
        let mut order = self.live_nodes();
        self.order_rng.shuffle(&mut order);
        for node in order {
            let i = node.0 as usize;
            let Some(partner) = self.views[i].oldest().map(|d| d.node) else { continue };
            let j = partner.0 as usize;
            if !self.alive[j] {
                self.views[i].remove(partner);
                continue;
            }
            let (a, b) = pair_mut(&mut self.views, i, j);
            let (ra, rb) = pair_mut(&mut self.rngs, i, j);
            gossip_exchange(
                &NeighborDescriptor::fresh(node, 1, None),
                a,
                &NeighborDescriptor::fresh(partner, 1, None),
                b,
                &self.config,
                ra,
                rb,
            );
        }
    }

    pub fn in_degree_stats(&self) -> Result<InDegreeStats, OverlayError> {
        in_degree_stats(&self.live_nodes(), self.views())
    }

    pub fn stale_descriptors(&self) -> usize {
        stale_descriptors(&self.live_nodes(), self.views())
    }

    pub fn is_weakly_connected(&self) -> bool {
        is_weakly_connected(&self.live_nodes(), self.views())
    }
}

/// Two distinct mutable elements of a slice.
pub(crate) fn pair_mut<T>(items: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert_ne!(i, j);
    if i < j {
        let (lo, hi) = items.split_at_mut(j);
        (&mut lo[i], &mut hi[0])
    } else {
        let (lo, hi) = items.split_at_mut(i);
        (&mut hi[0], &mut lo[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(node: u64, age: u32) -> NeighborDescriptor {
        NeighborDescriptor {
            node: NodeId(node),
            capacity: 1,
            age,
            load: None,
        }
    }

    fn ids(view: &View) -> Vec<u64> {
        let mut v: Vec<u64> = view.entries().iter().map(|d| d.node.0).collect();
        v.sort();
        v
    }

    #[test]
    fn view_rejects_self_duplicates_and_overflow() {
        let mut v = View::new(NodeId(0), 2);
        assert!(!v.insert(d(0, 0)));
        assert!(v.insert(d(1, 3)));
        assert!(!v.insert(d(1, 5)));
        assert!(v.insert(d(1, 1)));
        assert_eq!(v.get(NodeId(1)).unwrap().age, 1);
        assert!(v.insert(d(2, 0)));
        assert!(!v.insert(d(3, 0)));
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn full_disjoint_views_stay_full() {
        let cfg = OverlayConfig::default();
        let mut a = View::with_entries(NodeId(0), 50, (100..150).map(|i| d(i, 1)));
        let mut b = View::with_entries(NodeId(1), 50, (200..250).map(|i| d(i, 1)));
        let mut ra = RngStream::new(1, 0);
        let mut rb = RngStream::new(1, 1);
        gossip_exchange(&d(0, 0), &mut a, &d(1, 0), &mut b, &cfg, &mut ra, &mut rb);
        assert_eq!(a.len(), 50);
        assert_eq!(b.len(), 50);
        assert!(a.contains(NodeId(1)));
        assert!(b.contains(NodeId(0)));
    }

    // Hand trace, view size 4, H = 1, S = 0. A holds 1..4 with ages 1..4 and
    // receives [B(0), D(9)] from B; after appending there are 6 entries, the
    // excess is 2, healing removes the single oldest entry (D, age 9) and one
    // random entry goes. D can never survive.
    #[test]
    fn healing_drops_oldest_dead_descriptor() {
        let cfg = OverlayConfig {
            degree: 4,
            healing: 1,
            swap: 0,
            cycle_period: 0.5,
        };
        for seed in 0..20 {
            let mut a = View::with_entries(NodeId(0), 4, (1..=4).map(|i| d(i, i as u32)));
            let mut rng = RngStream::new(seed, 0);
            a.merge(vec![d(10, 0), d(99, 9)], &cfg, &mut rng);
            assert_eq!(a.len(), 4);
            assert!(!a.contains(NodeId(99)), "seed {seed}: {:?}", ids(&a));
            assert!(a.entries().iter().all(|e| e.age >= 1));
        }
    }

    #[test]
    fn push_half_inserts_initiator() {
        let cfg = OverlayConfig::default();
        let mut a = View::with_entries(NodeId(0), 50, [d(1, 0)]);
        let mut b = View::with_entries(NodeId(1), 50, (2..52).map(|i| d(i, 1)));
        assert!(!b.contains(NodeId(0)));
        let (mut ra, mut rb) = (RngStream::new(3, 0), RngStream::new(3, 1));
        gossip_exchange(&d(0, 0), &mut a, &d(1, 0), &mut b, &cfg, &mut ra, &mut rb);
        assert!(b.contains(NodeId(0)));
        assert_eq!(b.len(), 50);
    }

    #[test]
    fn merge_keeps_freshest_copy() {
        let cfg = OverlayConfig {
            degree: 4,
            healing: 0,
            swap: 0,
            cycle_period: 0.5,
        };
        let mut a = View::with_entries(NodeId(0), 4, [d(1, 7), d(2, 2)]);
        let mut rng = RngStream::new(0, 0);
        let mut fresh = d(1, 0);
        fresh.load = Some(0.4);
        a.merge(vec![fresh, d(2, 5), d(0, 0)], &cfg, &mut rng);
        assert_eq!(ids(&a), vec![1, 2]);
        assert_eq!(a.get(NodeId(1)).unwrap().age, 1);
        assert_eq!(a.get(NodeId(1)).unwrap().load, Some(0.4));
        assert_eq!(a.get(NodeId(2)).unwrap().age, 3);
    }

    #[test]
    fn join_copies_creator_view_and_creator() {
        let creator = View::with_entries(NodeId(0), 50, (1..=50).map(|i| d(i, i as u32)));
        let joined = join_view(&d(0, 3), &creator, NodeId(100));
        assert_eq!(joined.len(), 50);
        assert!(joined.contains(NodeId(0)));
        assert_eq!(joined.get(NodeId(0)).unwrap().age, 0);
        // The oldest inherited entry is the one dropped.
        assert!(!joined.contains(NodeId(50)));

        let lonely = View::new(NodeId(0), 50);
        let joined = join_view(&d(0, 0), &lonely, NodeId(1));
        assert_eq!(ids(&joined), vec![0]);
    }

    #[test]
    fn in_degree_of_triangle() {
        let nodes = [NodeId(0), NodeId(1), NodeId(2)];
        let views: Vec<View> = (0..3u64)
            .map(|i| View::with_entries(NodeId(i), 5, (0..3).filter(|&j| j != i).map(|j| d(j, 0))))
            .collect();
        let stats = in_degree_stats(&nodes, &views).unwrap();
        assert_eq!(stats.mean, 2.0);
        assert_eq!(stats.std_dev, 0.0);
        assert_eq!(stats.max, 2);
        assert!(is_weakly_connected(&nodes, &views));
    }

    #[test]
    fn in_degree_needs_two_nodes() {
        let view = View::new(NodeId(0), 5);
        assert_eq!(
            in_degree_stats(&[NodeId(0)], [&view]),
            Err(OverlayError::TooFewNodes(1))
        );
    }

    #[test]
    fn detects_disconnected_graph_and_stale_links() {
        let nodes = [NodeId(0), NodeId(1), NodeId(2), NodeId(3)];
        let views = vec![
            View::with_entries(NodeId(0), 5, [d(1, 0), d(9, 0)]),
            View::with_entries(NodeId(1), 5, [d(0, 0)]),
            View::with_entries(NodeId(2), 5, [d(3, 0), d(9, 1)]),
            View::with_entries(NodeId(3), 5, []),
        ];
        assert!(!is_weakly_connected(&nodes, &views));
        assert_eq!(stale_descriptors(&nodes, &views), 2);
    }

    #[test]
    fn departed_nodes_are_purged_within_twenty_rounds() {
        let mut m = Membership::random(200, OverlayConfig::default(), 5);
        for _ in 0..30 {
            m.round();
        }
        m.kill(NodeId(17));
        m.kill(NodeId(101));
        assert!(m.stale_descriptors() > 0);
        for _ in 0..20 {
            m.round();
        }
        assert_eq!(m.stale_descriptors(), 0);
        assert!(m.is_weakly_connected());
    }

    #[test]
    fn joined_node_is_referenced_after_one_exchange() {
        let cfg = OverlayConfig::default();
        let creator = View::with_entries(NodeId(0), 50, (1..=50).map(|i| d(i, 2)));
        let mut joined = join_view(&d(0, 0), &creator, NodeId(99));
        let partner = joined.oldest().unwrap().node;
        let mut partner_view = View::with_entries(partner, 50, (200..250).map(|i| d(i, 1)));
        let (mut ra, mut rb) = (RngStream::new(1, 0), RngStream::new(1, 1));
        gossip_exchange(&d(99, 0), &mut joined, &d(partner.0, 0), &mut partner_view, &cfg, &mut ra, &mut rb);
        assert!(partner_view.contains(NodeId(99)));
    }
}
