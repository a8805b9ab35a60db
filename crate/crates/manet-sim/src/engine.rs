//! Deterministic discrete-event core: a virtual clock, a time-ordered event
//! queue with stable tie-breaking, and labeled pseudo-random streams.
//!
//! Everything downstream of this module is a pure function of the scenario
//! seed. Two runs with the same configuration dispatch the same events in the
//! same order and consume the same random draws, which is what makes seed-paired
//! protocol comparisons meaningful.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::ops::Add;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Virtual time in seconds. Always finite and nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    /// Wraps a number of seconds. Panics on NaN, infinity, or negative input:
    /// a non-finite clock means the simulator itself is broken.
    pub fn from_secs(secs: f64) -> SimTime {
        assert!(
            secs.is_finite() && secs >= 0.0,
            "virtual time must be finite and nonnegative, got {secs}"
        );
        SimTime(secs)
    }

    pub fn secs(self) -> f64 {
        self.0
    }
}

impl Eq for SimTime {}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        // Finite by construction, so total_cmp agrees with the usual order.
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Add<f64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: f64) -> SimTime {
        SimTime::from_secs(self.0 + rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Token returned by [`Scheduler::schedule`]; permits cancellation until the
/// event fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Queued<T> {
    fire_at: SimTime,
    seq: u64,
    payload: T,
}

impl<T> PartialEq for Queued<T> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}
impl<T> Eq for Queued<T> {}

impl<T> Ord for Queued<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed on both keys: BinaryHeap is a max-heap and we want the
        // earliest (fire_at, seq) on top. Equal times dispatch in insertion
        // order, which keeps the trace independent of heap internals.
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}
impl<T> PartialOrd for Queued<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Outcome of driving the queue to a horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub events_dispatched: u64,
    pub final_clock: SimTime,
    /// True when the queue ran dry before the horizon.
    pub ended_early: bool,
}

/// Time-ordered event queue with a monotone clock.
///
/// Ties on `fire_at` break by insertion sequence. Cancellation is lazy: a
/// cancelled handle leaves a tombstone that is skipped on pop.
pub struct Scheduler<T> {
    now: SimTime,
    next_seq: u64,
    dispatched: u64,
    heap: BinaryHeap<Queued<T>>,
    cancelled: HashSet<u64>,
}

impl<T> Default for Scheduler<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> Scheduler<T> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            dispatched: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn events_dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Queues `payload` to fire at `fire_at`. Scheduling in the past is a
    /// simulator bug, not a scenario condition, and panics.
    pub fn schedule(&mut self, fire_at: SimTime, payload: T) -> EventHandle {
        assert!(
            fire_at >= self.now,
            "event scheduled in the past: {} < {}",
            fire_at,
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Queued {
            fire_at,
            seq,
            payload,
        });
        EventHandle(seq)
    }

    /// Cancels a queued event. Cancelling an already-fired handle is a no-op.
    pub fn cancel(&mut self, handle: EventHandle) {
        self.cancelled.insert(handle.0);
    }

    /// Pops the next event with `fire_at <= horizon`, advancing the clock to
    /// its fire time. Returns `None` when nothing is due.
    pub fn pop_due(&mut self, horizon: SimTime) -> Option<(SimTime, T)> {
        loop {
            let fire_at = self.heap.peek()?.fire_at;
            if fire_at > horizon {
                return None;
            }
            let ev = self.heap.pop().expect("peeked entry vanished");
            if self.cancelled.remove(&ev.seq) {
                continue;
            }
            debug_assert!(ev.fire_at >= self.now, "clock would move backwards");
            self.now = ev.fire_at;
            self.dispatched += 1;
            return Some((ev.fire_at, ev.payload));
        }
    }

    /// Dispatches every due event through `handler` until `horizon`. The
    /// clock ends at the horizon, or at the last event when the queue runs
    /// dry first.
    pub fn run_until<F: FnMut(SimTime, T)>(
        &mut self,
        horizon: SimTime,
        mut handler: F,
    ) -> RunSummary {
        assert!(horizon > SimTime::ZERO, "horizon must be positive");
        let start_dispatched = self.dispatched;
        while let Some((t, payload)) = self.pop_due(horizon) {
            handler(t, payload);
        }
        let ended_early = self.peek_live_time().is_none();
        if !ended_early {
            // Events remain beyond the horizon: the run ends exactly there.
            self.now = horizon;
        }
        RunSummary {
            events_dispatched: self.dispatched - start_dispatched,
            final_clock: self.now,
            ended_early,
        }
    }

    fn peek_live_time(&self) -> Option<SimTime> {
        // Tombstones may sit on top of the heap; this is only used for the
        // early-termination report, so a linear scan over the heap is fine.
        self.heap
            .iter()
            .filter(|q| !self.cancelled.contains(&q.seq))
            .map(|q| q.fire_at)
            .min()
    }

    /// Consumes the queue, yielding every still-pending (non-cancelled)
    /// event. Used for end-of-run audits of in-flight work.
    pub fn drain_pending(self) -> Vec<(SimTime, T)> {
        let cancelled = self.cancelled;
        self.heap
            .into_iter()
            .filter(|q| !cancelled.contains(&q.seq))
            .map(|q| (q.fire_at, q.payload))
            .collect()
    }
}

/// Purpose tag for a pseudo-random stream.
///
/// Each subsystem draws from its own stream so that enabling or disabling one
/// feature never shifts the draws another subsystem sees. Mobility gets one
/// stream per node, making every node's waypoint sequence a pure function of
/// (seed, node).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamLabel {
    Mobility(u32),
    Traffic,
    ExtGate,
    MacJitter,
}

impl StreamLabel {
    fn stream_id(self) -> u64 {
        match self {
            StreamLabel::Mobility(node) => (1u64 << 32) | u64::from(node),
            StreamLabel::Traffic => 2u64 << 32,
            StreamLabel::ExtGate => 3u64 << 32,
            StreamLabel::MacJitter => 4u64 << 32,
        }
    }
}

/// Labeled, draw-order-isolated random streams over ChaCha20.
///
/// ChaCha20 is a published, portable generator with reference outputs; the
/// same seed and label produce the same sequence on every platform. Uniform
/// doubles are derived from the top 53 bits of each 64-bit word, so no
/// platform or library sampling code is involved.
pub struct RandomStreams {
    seed: u64,
    streams: HashMap<u64, StreamState>,
}

struct StreamState {
    rng: ChaCha20Rng,
    draws: u64,
}

impl RandomStreams {
    pub fn new(seed: u64) -> Self {
        RandomStreams {
            seed,
            streams: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn state(&mut self, label: StreamLabel) -> &mut StreamState {
        let id = label.stream_id();
        let seed = self.seed;
        self.streams.entry(id).or_insert_with(|| StreamState {
            rng: ChaCha20Rng::from_seed(substream_key(seed, id)),
            draws: 0,
        })
    }

    /// Number of draws consumed so far on `label`. Zero for untouched streams.
    pub fn draw_count(&self, label: StreamLabel) -> u64 {
        self.streams
            .get(&label.stream_id())
            .map(|s| s.draws)
            .unwrap_or(0)
    }

    pub fn next_u64(&mut self, label: StreamLabel) -> u64 {
        let state = self.state(label);
        state.draws += 1;
        state.rng.next_u64()
    }

    /// Uniform double in `[0, 1)` from the top 53 bits of one word.
    pub fn next_f64(&mut self, label: StreamLabel) -> f64 {
        (self.next_u64(label) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in `[lo, hi)`. `lo >= hi` is a simulator bug and panics.
    pub fn draw_uniform(&mut self, label: StreamLabel, lo: f64, hi: f64) -> f64 {
        assert!(lo < hi, "draw_uniform bounds out of order: [{lo}, {hi})");
        let u = self.next_f64(label);
        let v = lo + u * (hi - lo);
        // Guard the upper bound against rounding at the very top of the range.
        if v >= hi {
            return f64::from_bits(hi.to_bits() - 1).max(lo);
        }
        v
    }

    /// Uniform index in `[0, n)`, unbiased via power-of-two rejection.
    pub fn draw_index(&mut self, label: StreamLabel, n: u64) -> u64 {
        assert!(n > 0, "draw_index over an empty range");
        let mask = n.next_power_of_two() - 1;
        loop {
            let x = self.next_u64(label) & mask;
            if x < n {
                return x;
            }
        }
    }
}

/// splitmix64 step (Steele, Lea, Flood 2014); used only to spread one 64-bit
/// seed plus a stream id into independent 256-bit ChaCha keys.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn substream_key(seed: u64, stream_id: u64) -> [u8; 32] {
    let mut state = seed ^ stream_id.wrapping_mul(0xA24BAED4963EE407);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}
