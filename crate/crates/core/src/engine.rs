//! Deterministic discrete-event core: virtual clock, pending-event queue and
//! seeded per-entity random streams.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Virtual time in seconds.
pub type SimTime = f64;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("event scheduled in the past: fire time {fire_time} < clock {now}")]
    PastEvent { fire_time: SimTime, now: SimTime },
    #[error("run horizon {end} is before the clock {now}")]
    PastHorizon { end: SimTime, now: SimTime },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// Identifies the simulated entity an event is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u64);

/// Short discriminator used in dispatch traces.
pub trait EventKind {
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone)]
pub struct Event<K> {
    pub fire_time: SimTime,
    pub seq: u64,
    pub target: EntityId,
    pub kind: K,
}

// Min-heap adapter ordered on (fire_time, seq).
struct Pending<K>(Event<K>);

impl<K> PartialEq for Pending<K> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<K> Eq for Pending<K> {}

impl<K> PartialOrd for Pending<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Pending<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .fire_time
            .total_cmp(&self.0.fire_time)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// One line of the dispatch log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub time: SimTime,
    pub target: EntityId,
    pub kind: &'static str,
}

/// Event queue plus virtual clock.
///
/// Events with equal fire times are dispatched in insertion order. The engine
/// is single-threaded; independent engines share nothing and may run on
/// different threads.
pub struct Engine<K> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Pending<K>>,
    last_dispatched: (SimTime, u64),
    dispatched: u64,
    trace: Option<Vec<TraceEntry>>,
}

impl<K: EventKind> Default for Engine<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K: EventKind> Engine<K> {
    pub fn new() -> Self {
        Self {
            now: 0.0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            last_dispatched: (f64::NEG_INFINITY, 0),
            dispatched: 0,
            trace: None,
        }
    }

    /// Starts recording every dispatched event.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> Option<&[TraceEntry]> {
        self.trace.as_deref()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn try_schedule(
        &mut self,
        fire_time: SimTime,
        target: EntityId,
        kind: K,
    ) -> Result<u64, EngineError> {
        if !(fire_time >= self.now) {
            return Err(EngineError::PastEvent {
                fire_time,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Pending(Event {
            fire_time,
            seq,
            target,
            kind,
        }));
        Ok(seq)
    }

    /// Schedules an event. Scheduling in the past is a programming error and
    /// aborts the simulation.
    pub fn schedule(&mut self, fire_time: SimTime, target: EntityId, kind: K) -> u64 {
        match self.try_schedule(fire_time, target, kind) {
            Ok(seq) => seq,
            Err(e) => panic!("{e}"),
        }
    }

    pub fn schedule_in(&mut self, delay: SimTime, target: EntityId, kind: K) -> u64 {
        self.schedule(self.now + delay, target, kind)
    }

    /// Pops the next event if it fires no later than `end`, advancing the clock.
    pub fn next_before(&mut self, end: SimTime) -> Option<Event<K>> {
        let fire_time = self.queue.peek()?.0.fire_time;
        if fire_time > end {
            return None;
        }
        let Pending(event) = self.queue.pop().expect("peeked");
        assert!(
            (event.fire_time, event.seq) > self.last_dispatched,
            "dispatch order violated at t={} seq={}",
            event.fire_time,
            event.seq
        );
        self.last_dispatched = (event.fire_time, event.seq);
        self.now = event.fire_time;
        self.dispatched += 1;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEntry {
                time: event.fire_time,
                target: event.target,
                kind: event.kind.name(),
            });
        }
        Some(event)
    }

    /// Moves the clock forward to `end` without dispatching anything.
    pub fn advance_to(&mut self, end: SimTime) -> Result<(), EngineError> {
        if end < self.now {
            return Err(EngineError::PastHorizon { end, now: self.now });
        }
        self.now = end;
        Ok(())
    }

    /// Dispatches every event with `fire_time <= end` to `handler`, then sets
    /// the clock to `end`.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> Result<(), EngineError>
    where
        F: FnMut(&mut Self, Event<K>),
    {
        if end < self.now {
            return Err(EngineError::PastHorizon { end, now: self.now });
        }
        while let Some(event) = self.next_before(end) {
            handler(self, event);
        }
        self.now = end;
        Ok(())
    }
}

/// A reproducible random stream keyed by `(seed, stream_id)`.
///
/// Every stochastic choice in the simulator draws from one of these; the
/// draw counter lets tests audit entropy usage.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
    draws: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
            draws: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of values drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Exponential variate by inversion.
    pub fn exponential(&mut self, mean: f64) -> Result<f64, EngineError> {
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(EngineError::InvalidArgument("exponential mean must be positive"));
        }
        Ok(-mean * (1.0 - self.uniform()).ln())
    }

    /// Uniform integer in `[0, n)`; `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
