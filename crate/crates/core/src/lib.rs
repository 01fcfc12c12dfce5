//! A per-node scaling rule in which every node of a mixed-capacity pool
//! adds or removes capacity with a load-derived probability, together with
//! a deterministic discrete-event simulator of a self-scaling service overlay.
//!
//! The decision core lives in [`depas`]. The simulator is assembled in
//! [`sim`] from the [`engine`], [`overlay`], [`traffic`], [`worker`] and
//! [`monitoring`] building blocks; [`analysis`] holds scenario files,
//! metrics, the optimal-capacity oracle and multi-run aggregation.

// Validation writes `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod depas;
pub mod engine;
pub mod monitoring;
pub mod overlay;
pub mod sim;
pub mod traffic;
pub mod worker;

use std::fmt;

/// Identity of a worker node. Ids are never reused within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Node capacity in requests per second, which is also the number of
/// requests a worker executes in parallel.
pub type Capacity = u32;
