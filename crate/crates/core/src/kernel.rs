//! Event calendar, simulation clock and reproducible random streams.
//!
//! Every simulation run owns one [`Calendar`]. Events are delivered in
//! lexicographic `(fire_time, seq)` order, where `seq` is the insertion
//! counter, so simultaneous events are resolved purely by scheduling order.
//! Cancellation is lazy: a cancelled event stays in the heap and is skipped
//! when it surfaces.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Seconds since simulation start (00:00 of the operating day).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    /// Panics on negative, NaN or infinite input.
    pub fn from_secs(seconds: f64) -> Self {
        Self::try_from_secs(seconds).expect("simulation time must be finite and nonnegative")
    }

    pub fn try_from_secs(seconds: f64) -> Option<Self> {
        // `+ 0.0` turns -0.0 into 0.0 so that equality and ordering agree.
        (seconds.is_finite() && seconds >= 0.0).then_some(SimTime(seconds + 0.0))
    }

    pub fn secs(self) -> f64 {
        self.0
    }
}

impl Eq for SimTime {}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.0)
    }
}

/// Handle returned by [`Calendar::schedule`]; equal to the event's sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(u64);

impl EventId {
    pub fn seq(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("cannot schedule event at {at} while clock is at {now}")]
    PastEvent { at: SimTime, now: SimTime },
}

#[derive(Debug, PartialEq, Eq)]
struct Entry {
    at: SimTime,
    seq: u64,
}

// BinaryHeap is a max-heap, so the ordering is reversed.
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.cmp(&self.at).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Priority-ordered event calendar with a monotone clock.
#[derive(Debug)]
pub struct Calendar<P> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry>,
    live: HashMap<u64, P>,
}

impl<P> Default for Calendar<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Calendar<P> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            live: HashMap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events that are scheduled and not cancelled.
    pub fn pending(&self) -> usize {
        self.live.len()
    }

    pub fn schedule(&mut self, at: SimTime, payload: P) -> Result<EventId, KernelError> {
        if at < self.now {
            return Err(KernelError::PastEvent { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, seq });
        self.live.insert(seq, payload);
        Ok(EventId(seq))
    }

    /// Returns `true` if the event was live and is now inert.
    pub fn cancel(&mut self, id: EventId) -> bool {
        self.live.remove(&id.0).is_some()
    }

    /// Time of the next live event without delivering it.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        while let Some(top) = self.heap.peek() {
            if self.live.contains_key(&top.seq) {
                return Some(top.at);
            }
            self.heap.pop();
        }
        None
    }

    /// Pops the next live event and moves the clock to its fire time.
    /// `None` once the calendar is exhausted.
    pub fn advance(&mut self) -> Option<(SimTime, EventId, P)> {
        while let Some(entry) = self.heap.pop() {
            if let Some(payload) = self.live.remove(&entry.seq) {
                debug_assert!(entry.at >= self.now);
                self.now = entry.at;
                return Some((entry.at, EventId(entry.seq), payload));
            }
        }
        None
    }
}

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    /// Per-vehicle scenario parameters (arrival, parking, demand).
    EvParameters,
    /// Free-form purpose for extensions and tests.
    Custom(u32),
}

impl StreamPurpose {
    fn code(self) -> u64 {
        match self {
            StreamPurpose::EvParameters => 1,
            StreamPurpose::Custom(c) => 0x1_0000_0000 | u64::from(c),
        }
    }
}

/// Structured label of a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub experiment: u32,
    pub replication: u32,
    pub agent: u32,
    pub purpose: StreamPurpose,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamId {
    fn key(&self) -> u64 {
        let mut h = mix64(u64::from(self.experiment) ^ 0x9E37_79B9_7F4A_7C15);
        h = mix64(h ^ u64::from(self.replication).wrapping_mul(0xD134_2543_DE82_EF95));
        h = mix64(h ^ u64::from(self.agent).wrapping_mul(0xA076_1D64_78BD_642F));
        mix64(h ^ self.purpose.code().wrapping_mul(0xE703_7ED1_A0B4_28DB))
    }
}

/// Counter-based random stream keyed by `(root_seed, stream_id)`.
///
/// The root seed selects the ChaCha key and the stream id selects the
/// ChaCha stream, so a stream's samples do not depend on how many values
/// any other stream has drawn.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

pub fn derive_stream(root_seed: u64, stream_id: StreamId) -> RngStream {
    let mut key = [0u8; 32];
    let mut state = root_seed;
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        chunk.copy_from_slice(&mix64(state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream_id.key());
    RngStream { rng }
}

impl RngStream {
    /// Uniform real in `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform real in `[lo, hi)`; returns `lo` when the interval is degenerate.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        assert!(lo <= hi, "uniform: lo {lo} > hi {hi}");
        if lo == hi {
            return lo;
        }
        self.rng.gen_range(lo..hi)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn uniform_int(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi, "uniform_int: lo {lo} > hi {hi}");
        self.rng.gen_range(lo..=hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: f64) -> SimTime {
        SimTime::from_secs(s)
    }

    #[test]
    fn single_event_fires_at_its_time() {
        let mut cal = Calendar::new();
        cal.schedule(t(5.0), "a").unwrap();
        let (at, _, p) = cal.advance().unwrap();
        assert_eq!(at, t(5.0));
        assert_eq!(p, "a");
        assert_eq!(cal.now(), t(5.0));
    }

    #[test]
    fn simultaneous_events_keep_insertion_order() {
        let mut cal = Calendar::new();
        cal.schedule(t(5.0), "A").unwrap();
        cal.schedule(t(5.0), "B").unwrap();
        assert_eq!(cal.advance().unwrap().2, "A");
        assert_eq!(cal.advance().unwrap().2, "B");
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut cal = Calendar::new();
        cal.schedule(t(10.0), ()).unwrap();
        cal.advance();
        assert_eq!(
            cal.schedule(t(3.0), ()),
            Err(KernelError::PastEvent { at: t(3.0), now: t(10.0) })
        );
    }

    #[test]
    fn cancel_semantics() {
        let mut cal = Calendar::new();
        let a = cal.schedule(t(1.0), "a").unwrap();
        let b = cal.schedule(t(1.0), "b").unwrap();
        assert!(cal.cancel(a));
        assert!(!cal.cancel(a));
        let (_, id, p) = cal.advance().unwrap();
        assert_eq!((id, p), (b, "b"));
        assert!(!cal.cancel(b));
        assert!(cal.advance().is_none());
    }

    #[test]
    fn earlier_event_first_and_exhaustion() {
        let mut cal = Calendar::new();
        cal.schedule(t(2.0), 2).unwrap();
        cal.schedule(t(1.0), 1).unwrap();
        assert_eq!(cal.advance().unwrap().2, 1);
        assert_eq!(cal.advance().unwrap().2, 2);
        assert!(cal.advance().is_none());
        assert!(Calendar::<()>::new().advance().is_none());
    }

    fn ev_stream(agent: u32) -> StreamId {
        StreamId { experiment: 1, replication: 0, agent, purpose: StreamPurpose::EvParameters }
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let mut a = derive_stream(7, ev_stream(1));
        let mut b = derive_stream(7, ev_stream(1));
        let xs: Vec<f64> = (0..100).map(|_| a.uniform01()).collect();
        let ys: Vec<f64> = (0..100).map(|_| b.uniform01()).collect();
        assert_eq!(xs, ys);

        let mut c = derive_stream(7, ev_stream(2));
        let zs: Vec<f64> = (0..100).map(|_| c.uniform01()).collect();
        assert_ne!(xs, zs);

        let mut d = derive_stream(8, ev_stream(1));
        assert_ne!(xs[0], d.uniform01());
    }

    #[test]
    fn uniform_range_contract() {
        let mut s = derive_stream(3, ev_stream(0));
        for _ in 0..10_000 {
            let x = s.uniform(9.0, 10.0);
            assert!((9.0..10.0).contains(&x));
        }
        assert_eq!(s.uniform(4.0, 4.0), 4.0);
        for _ in 0..1000 {
            assert!(s.uniform_int(2, 5) <= 5);
        }
    }
}
