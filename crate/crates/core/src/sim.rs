//! Discrete-event engine: integer microsecond clock, a `(time, sequence)`
//! ordered event queue, seeded per-component random streams and a
//! newline-delimited event trace.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::io::{self, Write};
use std::ops::{Add, AddAssign, Sub};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in whole microseconds since the start of a run.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds a millisecond quantity to the nearest microsecond. Negative
    /// and non-finite inputs map to zero.
    pub fn from_millis_f64(ms: f64) -> Self {
        if ms.is_finite() && ms > 0.0 {
            SimTime((ms * 1_000.0).round() as u64)
        } else {
            SimTime(0)
        }
    }

    pub fn from_secs_f64(s: f64) -> Self {
        Self::from_millis_f64(s * 1_000.0)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        self.saturating_sub(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("causality violation: event at {at} scheduled when the clock is already at {now}")]
    Causality { at: SimTime, now: SimTime },
}

/// Handle returned by [`Scheduler::schedule`]; can be used to cancel the event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(u64);

/// One queued event. Ties on `fire_time` are broken by `sequence`, which is
/// assigned in scheduling order.
#[derive(Debug, Clone)]
pub struct EventRecord<E> {
    pub fire_time: SimTime,
    pub sequence: u64,
    pub payload: E,
}

impl<E> PartialEq for EventRecord<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_time == other.fire_time && self.sequence == other.sequence
    }
}

impl<E> Eq for EventRecord<E> {}

impl<E> PartialOrd for EventRecord<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for EventRecord<E> {
    // BinaryHeap is a max-heap; reverse so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_time
            .cmp(&self.fire_time)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

/// What a [`Model`] wants the engine to do after handling an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Halt,
}

/// An event handler driven by a [`Scheduler`].
pub trait Model {
    type Event;

    fn handle(&mut self, now: SimTime, event: Self::Event, sched: &mut Scheduler<Self::Event>)
        -> Flow;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub events_processed: u64,
    pub final_clock: SimTime,
    pub halted: bool,
}

/// The event queue and global clock of one simulation instance.
#[derive(Debug)]
pub struct Scheduler<E> {
    now: SimTime,
    next_sequence: u64,
    queue: BinaryHeap<EventRecord<E>>,
    cancelled: HashSet<u64>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_sequence: 0,
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of queued events, including cancelled ones not yet drained.
    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, fire_time: SimTime, payload: E) -> Result<EventId, SimError> {
        if fire_time < self.now {
            return Err(SimError::Causality {
                at: fire_time,
                now: self.now,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.queue.push(EventRecord {
            fire_time,
            sequence,
            payload,
        });
        Ok(EventId(sequence))
    }

    /// Schedules relative to the current clock; cannot violate causality.
    pub fn schedule_in(&mut self, delay: SimTime, payload: E) -> EventId {
        let at = self.now + delay;
        self.schedule(at, payload)
            .expect("relative scheduling is never in the past")
    }

    /// Returns false when the event already fired or was cancelled before.
    pub fn cancel(&mut self, id: EventId) -> bool {
        if id.0 >= self.next_sequence {
            return false;
        }
        let still_queued = self.queue.iter().any(|r| r.sequence == id.0);
        still_queued && self.cancelled.insert(id.0)
    }

    /// Cancels without the queue scan; use when the id is known to be live.
    pub fn cancel_unchecked(&mut self, id: EventId) {
        self.cancelled.insert(id.0);
    }

    fn pop_until(&mut self, t_end: SimTime) -> Option<EventRecord<E>> {
        loop {
            let head = self.queue.peek()?;
            if head.fire_time > t_end {
                return None;
            }
            let record = self.queue.pop()?;
            if self.cancelled.remove(&record.sequence) {
                continue;
            }
            debug_assert!(record.fire_time >= self.now);
            self.now = record.fire_time;
            return Some(record);
        }
    }

    /// Processes every event with `fire_time <= t_end` in `(time, sequence)`
    /// order. The clock ends at `t_end` unless the model halts earlier, in
    /// which case it stays at the halting event's time.
    pub fn run_until<M>(&mut self, model: &mut M, t_end: SimTime) -> RunSummary
    where
        M: Model<Event = E>,
    {
        let mut events_processed = 0;
        while let Some(record) = self.pop_until(t_end) {
            events_processed += 1;
            if model.handle(record.fire_time, record.payload, self) == Flow::Halt {
                return RunSummary {
                    events_processed,
                    final_clock: self.now,
                    halted: true,
                };
            }
        }
        if t_end > self.now {
            self.now = t_end;
        }
        RunSummary {
            events_processed,
            final_clock: self.now,
            halted: false,
        }
    }
}

/// A reproducible random stream identified by `(seed, stream id)`.
///
/// Each stochastic component owns its own stream so that adding or removing
/// a component never shifts another component's draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform draw in `[-1, 1]`.
    pub fn symmetric(&mut self) -> f64 {
        2.0 * self.unit() - 1.0
    }

    /// Always consumes exactly one draw, whatever `p` is.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Well-known stream ids. Keep these stable: changing one changes every
/// seeded result that depends on it.
pub mod streams {
    pub const COMMAND_JITTER: u64 = 1;
    pub const COMMAND_LOSS: u64 = 2;
    pub const FEEDBACK_JITTER: u64 = 3;
    pub const FEEDBACK_LOSS: u64 = 4;
    pub const URLLC_RING_LOSS: u64 = 5;
    pub const SENSOR_RING_LOSS: u64 = 6;
    pub const OVERLAY_JITTER: u64 = 7;
    pub const OVERLAY_LOSS: u64 = 8;
    pub const REQUEST_GENERATOR: u64 = 9;
}

/// One line of the event trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_us: u64,
    pub component: String,
    pub kind: String,
    pub details: serde_json::Value,
}

/// Collects [`TraceRecord`]s when enabled; a disabled log drops everything.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceLog {
    enabled: bool,
    records: Vec<TraceRecord>,
}

impl TraceLog {
    pub fn enabled() -> Self {
        TraceLog {
            enabled: true,
            records: Vec::new(),
        }
    }

    pub fn disabled() -> Self {
        TraceLog::default()
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn record(
        &mut self,
        time: SimTime,
        component: &str,
        kind: &str,
        details: impl FnOnce() -> serde_json::Value,
    ) {
        if self.enabled {
            self.records.push(TraceRecord {
                time_us: time.as_micros(),
                component: component.to_owned(),
                kind: kind.to_owned(),
                details: details(),
            });
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn write_ndjson<W: Write>(&self, mut out: W) -> io::Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}
