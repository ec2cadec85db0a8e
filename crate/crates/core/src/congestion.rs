//! Forwarding buffer with overflow accounting and predictive congestion
//! marking.
//!
//! Each node samples its occupancy once per epoch. The node reports
//! congestion when the sampled occupancy plus the growth over the last epoch
//! would exceed the buffer capacity.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueResult {
    Queued,
    /// Buffer was full; the packet is dropped with reason `overflow`.
    Dropped,
}

/// Congestion-notification bit carried by data packets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CnFlag(pub bool);

impl CnFlag {
    pub fn is_set(self) -> bool {
        self.0
    }
}

/// Per-node forwarding buffer.
#[derive(Debug, Clone)]
pub struct NodeBuffer {
    capacity: usize,
    occupancy: usize,
    /// Occupancy sampled at the start of the current epoch (b_k).
    sampled: usize,
    /// Occupancy sampled at the start of the previous epoch (b_{k-1}).
    prev_sampled: usize,
    epoch_len: f64,
    epoch: u64,
    drops: u64,
}

impl NodeBuffer {
    pub fn new(capacity: usize, epoch_len: f64) -> Self {
        assert!(epoch_len > 0.0, "epoch length must be positive");
        Self {
            capacity,
            occupancy: 0,
            sampled: 0,
            prev_sampled: 0,
            epoch_len,
            epoch: 0,
            drops: 0,
        }
    }

    /// Buffer with explicit samples, for evaluating the flag in isolation.
    pub fn with_samples(capacity: usize, occupancy: usize, prev_occupancy: usize) -> Self {
        let mut b = Self::new(capacity, 1.0);
        b.occupancy = occupancy.min(capacity);
        b.sampled = occupancy;
        b.prev_sampled = prev_occupancy;
        b
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    pub fn on_enqueue(&mut self) -> EnqueueResult {
        if self.occupancy < self.capacity {
            self.occupancy += 1;
            EnqueueResult::Queued
        } else {
            self.drops += 1;
            EnqueueResult::Dropped
        }
    }

    pub fn on_dequeue(&mut self) {
        assert!(self.occupancy > 0, "dequeue from empty buffer");
        self.occupancy -= 1;
    }

    /// Brings the epoch samples up to date. Occupancy only changes on this
    /// node's own events, so the value seen on the first touch of a new epoch
    /// equals the value at the epoch boundary.
    pub fn advance_epoch(&mut self, now: f64) {
        let epoch = (now / self.epoch_len).floor().max(0.0) as u64;
        if epoch <= self.epoch {
            return;
        }
        if epoch == self.epoch + 1 {
            self.prev_sampled = self.sampled;
        } else {
            // at least one whole epoch passed untouched at constant occupancy
            self.prev_sampled = self.occupancy;
        }
        self.sampled = self.occupancy;
        self.epoch = epoch;
    }

    pub fn congestion_flag(&self) -> bool {
        congestion_flag(self.capacity, self.sampled, self.prev_sampled)
    }
}

/// `b_k + (b_k - b_{k-1}) > capacity`; growth may be negative.
pub fn congestion_flag(capacity: usize, occupancy: usize, prev_occupancy: usize) -> bool {
    let growth = occupancy as i64 - prev_occupancy as i64;
    occupancy as i64 + growth > capacity as i64
}

/// OR-marks the packet's flag with the local verdict.
pub fn mark_packet(cn: CnFlag, local: bool) -> CnFlag {
    CnFlag(cn.0 || local)
}
