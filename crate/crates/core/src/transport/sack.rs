use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Cumulative acknowledgment plus the received runs beyond the first hole.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SackInfo {
    pub cumulative_ack: u64,
    /// Disjoint ascending inclusive ranges, all above `cumulative_ack + 1`.
    pub blocks: Vec<(u64, u64)>,
}

impl SackInfo {
    pub fn contains(&self, seq: u64) -> bool {
        (1..=self.cumulative_ack).contains(&seq)
            || self.blocks.iter().any(|&(lo, hi)| (lo..=hi).contains(&seq))
    }

    /// Highest acknowledged sequence number, 0 when nothing was received.
    pub fn max_acked(&self) -> u64 {
        self.blocks.last().map_or(self.cumulative_ack, |b| b.1)
    }

    pub fn acked_count(&self) -> u64 {
        self.cumulative_ack + self.blocks.iter().map(|(lo, hi)| hi - lo + 1).sum::<u64>()
    }
}

/// Builds the SACK describing `received` (sequence numbers start at 1).
pub fn build_sack(received: &BTreeSet<u64>) -> SackInfo {
    let mut cumulative_ack = 0;
    let mut blocks: Vec<(u64, u64)> = Vec::new();
    for &seq in received.range(1..) {
        if blocks.is_empty() && seq == cumulative_ack + 1 {
            cumulative_ack = seq;
            continue;
        }
        match blocks.last_mut() {
            Some(last) if last.1 + 1 == seq => last.1 = seq,
            _ => blocks.push((seq, seq)),
        }
    }
    SackInfo {
        cumulative_ack,
        blocks,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentRecord {
    pub first_sent: f64,
    pub last_sent: f64,
    /// Time the sequence was last queued for retransmission.
    pub retransmit_at: Option<f64>,
}

/// Sender-side record of unacknowledged sequence numbers.
#[derive(Debug, Clone, Default)]
pub struct RetxBuffer {
    unacked: BTreeMap<u64, SentRecord>,
}

impl RetxBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on_sent(&mut self, seq: u64, now: f64) {
        self.unacked
            .entry(seq)
            .and_modify(|r| r.last_sent = now)
            .or_insert(SentRecord {
                first_sent: now,
                last_sent: now,
                retransmit_at: None,
            });
    }

    pub fn len(&self) -> usize {
        self.unacked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unacked.is_empty()
    }

    pub fn contains(&self, seq: u64) -> bool {
        self.unacked.contains_key(&seq)
    }

    pub fn get(&self, seq: u64) -> Option<&SentRecord> {
        self.unacked.get(&seq)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u64, &SentRecord)> {
        self.unacked.iter()
    }

    pub(crate) fn mark_retransmit(&mut self, seq: u64, now: f64) {
        if let Some(r) = self.unacked.get_mut(&seq) {
            r.retransmit_at = Some(now);
        }
    }
}

/// Removes acknowledged entries and returns every hole below the highest
/// acknowledged sequence, in one batch. A hole already queued for
/// retransmission less than `rtt` ago is not queued again.
pub fn on_sack(sack: &SackInfo, retx: &mut RetxBuffer, now: f64, rtt: f64) -> Vec<u64> {
    retx.unacked.retain(|&seq, _| !sack.contains(seq));
    let max_acked = sack.max_acked();
    let mut holes = Vec::new();
    for (&seq, rec) in retx.unacked.range_mut(..max_acked) {
        let recent = rec.retransmit_at.is_some_and(|t| now - t < rtt);
        if !recent {
            rec.retransmit_at = Some(now);
            holes.push(seq);
        }
    }
    holes
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(xs: &[u64]) -> BTreeSet<u64> {
        xs.iter().copied().collect()
    }

    #[test]
    fn build_examples() {
        let s = build_sack(&set(&[1, 2, 3, 5, 6, 9]));
        assert_eq!(s.cumulative_ack, 3);
        assert_eq!(s.blocks, vec![(5, 6), (9, 9)]);
        let s = build_sack(&set(&[1, 2, 3]));
        assert_eq!((s.cumulative_ack, s.blocks.len()), (3, 0));
        let s = build_sack(&BTreeSet::new());
        assert_eq!((s.cumulative_ack, s.blocks.len()), (0, 0));
        let s = build_sack(&set(&[2, 3, 7]));
        assert_eq!((s.cumulative_ack, s.blocks), (0, vec![(2, 3), (7, 7)]));
    }

    fn sent(n: u64) -> RetxBuffer {
        let mut b = RetxBuffer::new();
        for s in 1..=n {
            b.on_sent(s, 0.0);
        }
        b
    }

    #[test]
    fn holes_in_one_batch() {
        let mut b = sent(9);
        let sack = build_sack(&set(&[1, 2, 3, 5, 6, 9]));
        assert_eq!(on_sack(&sack, &mut b, 1.0, 0.2), vec![4, 7, 8]);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn full_ack_empties_buffer() {
        let mut b = sent(5);
        let sack = build_sack(&set(&[1, 2, 3, 4, 5]));
        assert!(on_sack(&sack, &mut b, 1.0, 0.2).is_empty());
        assert!(b.is_empty());
    }

    #[test]
    fn duplicate_sack_within_rtt_is_idempotent() {
        let mut b = sent(9);
        let sack = build_sack(&set(&[1, 2, 3, 5, 6, 9]));
        assert_eq!(on_sack(&sack, &mut b, 1.0, 0.2), vec![4, 7, 8]);
        assert!(on_sack(&sack, &mut b, 1.1, 0.2).is_empty());
        // after one RTT the still-missing holes are eligible again
        assert_eq!(on_sack(&sack, &mut b, 1.25, 0.2), vec![4, 7, 8]);
    }

    proptest! {
        #[test]
        fn sack_describes_exact_set(xs in proptest::collection::btree_set(1u64..60, 0..40)) {
            let s = build_sack(&xs);
            for seq in 1..70 {
                prop_assert_eq!(s.contains(seq), xs.contains(&seq));
            }
            prop_assert_eq!(s.acked_count(), xs.len() as u64);
            prop_assert!(!xs.contains(&(s.cumulative_ack + 1)));
            for w in s.blocks.windows(2) {
                prop_assert!(w[0].1 + 1 < w[1].0);
            }
            if let Some(b) = s.blocks.first() {
                prop_assert!(b.0 > s.cumulative_ack + 1);
            }
        }
    }
}
