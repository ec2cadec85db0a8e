use std::collections::BTreeSet;

use super::sack::{build_sack, SackInfo};
use super::{feedback_from_probe, ProbePacket, RateFeedback, TransportError};

/// Receiver endpoint: duplicate suppression, path measurement and feedback.
#[derive(Debug, Clone, Default)]
pub struct Receiver {
    received: BTreeSet<u64>,
    total: Option<u64>,
    last: Option<ProbePacket>,
    period_sum: f64,
    period_count: u32,
    feedback_sent: u64,
}

impl Receiver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a probe measurement and answers it immediately.
    pub fn on_probe(&mut self, probe: &ProbePacket, now: f64) -> Result<RateFeedback, TransportError> {
        let fb = feedback_from_probe(probe, now)?;
        self.last = Some(*probe);
        self.period_sum = 0.0;
        self.period_count = 0;
        self.feedback_sent += 1;
        Ok(fb)
    }

    /// Returns true the first time `seq` arrives. `path` is the bottleneck
    /// field the data packet accumulated on its way.
    pub fn on_data(&mut self, seq: u64, total: u64, path: &ProbePacket) -> bool {
        self.total = Some(total);
        if path.bottleneck_delay > 0.0 {
            self.last = Some(*path);
            self.period_sum += path.bottleneck_delay;
            self.period_count += 1;
        }
        self.received.insert(seq)
    }

    /// Feedback for the period just ended: the inverse of the mean bottleneck
    /// delay observed on data packets, or of the latest measurement when no
    /// data arrived.
    pub fn periodic_feedback(&mut self, now: f64) -> Option<RateFeedback> {
        let last = self.last?;
        let probe = if self.period_count > 0 {
            ProbePacket {
                bottleneck_delay: self.period_sum / self.period_count as f64,
                hop_count: last.hop_count,
            }
        } else {
            last
        };
        self.period_sum = 0.0;
        self.period_count = 0;
        let fb = feedback_from_probe(&probe, now).ok()?;
        self.feedback_sent += 1;
        Some(fb)
    }

    pub fn sack(&self) -> SackInfo {
        build_sack(&self.received)
    }

    pub fn unique_received(&self) -> u64 {
        self.received.len() as u64
    }

    pub fn is_complete(&self) -> bool {
        self.total.is_some_and(|t| self.received.len() as u64 >= t)
    }

    pub fn feedback_sent(&self) -> u64 {
        self.feedback_sent
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(d: f64) -> ProbePacket {
        ProbePacket {
            bottleneck_delay: d,
            hop_count: 3,
        }
    }

    #[test]
    fn dedup_and_completion() {
        let mut r = Receiver::new();
        assert!(r.on_data(1, 2, &path(0.01)));
        assert!(!r.on_data(1, 2, &path(0.01)));
        assert!(!r.is_complete());
        assert!(r.on_data(2, 2, &path(0.01)));
        assert!(r.is_complete());
        assert_eq!(r.sack().cumulative_ack, 2);
    }

    #[test]
    fn periodic_feedback_averages_period() {
        let mut r = Receiver::new();
        assert!(r.periodic_feedback(0.5).is_none());
        r.on_data(1, 10, &path(0.01));
        r.on_data(2, 10, &path(0.03));
        let fb = r.periodic_feedback(1.0).unwrap();
        assert!((fb.r_f - 50.0).abs() < 1e-9);
        assert_eq!((fb.hop_count, fb.issued_at), (3, 1.0));
        // no data in the next period: latest measurement is reused
        let fb = r.periodic_feedback(1.5).unwrap();
        assert!((fb.r_f - 1.0 / 0.03).abs() < 1e-9);
    }

    #[test]
    fn probe_answer() {
        let mut r = Receiver::new();
        let fb = r.on_probe(&path(0.02), 0.3).unwrap();
        assert_eq!(fb.r_f, 50.0);
        assert!(r.on_probe(&path(0.0), 0.4).is_err());
    }
}
