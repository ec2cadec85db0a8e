use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use super::topology::NodeId;
use super::trace::{DropReason, PacketClass, SimulationTrace, TraceEvent, TraceKind};
use super::SimError;

/// A scheduled occurrence. `ordinal` is assigned at schedule time and breaks
/// ties between events sharing a timestamp.
#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub time: f64,
    pub ordinal: u64,
    pub target: NodeId,
    pub payload: P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Queued<P>(SimEvent<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.ordinal == other.0.ordinal
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    // min-heap on (time, ordinal)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .time
            .total_cmp(&self.0.time)
            .then(other.0.ordinal.cmp(&self.0.ordinal))
    }
}

/// Virtual clock, event queue and trace of a single run.
pub struct Kernel<P> {
    now: f64,
    next_ordinal: u64,
    queue: BinaryHeap<Queued<P>>,
    cancelled: HashSet<u64>,
    trace: SimulationTrace,
}

impl<P> Default for Kernel<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Kernel<P> {
    pub fn new() -> Self {
        Self {
            now: 0.0,
            next_ordinal: 0,
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
            trace: SimulationTrace::new(),
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn schedule(&mut self, time: f64, target: NodeId, payload: P) -> Result<EventHandle, SimError> {
        if !(time >= self.now) || time.is_infinite() {
            return Err(SimError::PastTime {
                time,
                now: self.now,
            });
        }
        let ordinal = self.next_ordinal;
        self.next_ordinal += 1;
        self.queue.push(Queued(SimEvent {
            time,
            ordinal,
            target,
            payload,
        }));
        Ok(EventHandle(ordinal))
    }

    pub fn schedule_in(&mut self, delay: f64, target: NodeId, payload: P) -> Result<EventHandle, SimError> {
        self.schedule(self.now + delay, target, payload)
    }

    /// Returns false if the event already fired or was cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_ordinal {
            return false;
        }
        let live = self.queue.iter().any(|q| q.0.ordinal == handle.0);
        live && self.cancelled.insert(handle.0)
    }

    /// Removes the next event due at or before `t_end`, advancing the clock.
    pub fn pop_due(&mut self, t_end: f64) -> Option<SimEvent<P>> {
        loop {
            let due = self.queue.peek().is_some_and(|q| q.0.time <= t_end);
            if !due {
                return None;
            }
            let Queued(ev) = self.queue.pop().unwrap();
            if self.cancelled.remove(&ev.ordinal) {
                continue;
            }
            debug_assert!(ev.time >= self.now);
            self.now = ev.time;
            return Some(ev);
        }
    }

    /// Processes every event with time <= `t_end` in (time, ordinal) order.
    /// The clock ends at `t_end` even if the queue drains early.
    pub fn run_until<E, F>(&mut self, t_end: f64, mut handler: F) -> Result<(), E>
    where
        F: FnMut(&mut Kernel<P>, SimEvent<P>) -> Result<(), E>,
    {
        while let Some(ev) = self.pop_due(t_end) {
            handler(self, ev)?;
        }
        if t_end.is_finite() && t_end > self.now {
            self.now = t_end;
        }
        Ok(())
    }

    pub fn pending(&self) -> impl Iterator<Item = &SimEvent<P>> {
        self.queue
            .iter()
            .map(|q| &q.0)
            .filter(|e| !self.cancelled.contains(&e.ordinal))
    }

    pub fn pending_len(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        node: NodeId,
        kind: TraceKind,
        packet_id: u64,
        class: Option<PacketClass>,
        seq: u64,
        gen_time: f64,
        reason: Option<DropReason>,
    ) {
        self.trace.push(TraceEvent {
            time: self.now,
            node,
            kind,
            packet_id,
            class,
            seq,
            gen_time,
            reason,
        });
    }

    pub fn trace(&self) -> &SimulationTrace {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut SimulationTrace {
        &mut self.trace
    }

    pub fn into_trace(self) -> SimulationTrace {
        self.trace
    }
}
