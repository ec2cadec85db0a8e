//! Rate-controlled reliable transport between sub-sinks.
//!
//! A connection starts by sending a probe whose bottleneck field collects the
//! largest per-node delay along the path; the receiver turns it into a rate
//! feedback. In steady state the sender moves between Increase, Decrease and
//! Hold on periodic receiver feedback, halves its rate for each silent
//! feedback period and falls back to probing after the second one. Holes are
//! recovered through selective acknowledgments.

mod receiver;
mod sack;

use serde::{Deserialize, Serialize};

pub use receiver::Receiver;
pub use sack::{build_sack, on_sack, RetxBuffer, SackInfo, SentRecord};

/// Hop count at which the increase fraction saturates.
pub const MAX_FRACTION: u32 = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("no route to peer")]
    NoRoute,
    #[error("probe reached the receiver with a zero bottleneck delay")]
    DegenerateProbe,
    #[error("event-to-action deadline expired with {remaining} packets outstanding")]
    DeadlineExpired { remaining: u64 },
    #[error("feedback issued at {issued_at} is not newer than {last}")]
    StaleFeedback { issued_at: f64, last: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    StartUp,
    Increase,
    Decrease,
    Hold,
    Probe,
}

impl Phase {
    pub fn sends_data(self) -> bool {
        matches!(self, Phase::Increase | Phase::Decrease | Phase::Hold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    /// Receiver feedback period.
    pub t_fdbk: f64,
    /// Probe period while probing.
    pub t_p: f64,
    /// Initial round-trip estimate; both periods must exceed it.
    pub rtt_estimate: f64,
    /// Multiplicative decrease per silent feedback period.
    pub decrease_factor: f64,
    /// Relative band around the feedback rate that counts as reached.
    pub hold_band: f64,
    pub sack: bool,
}

impl TransportConfig {
    pub fn validate(&self) -> Vec<(&'static str, &'static str)> {
        let mut v = Vec::new();
        if !(self.rtt_estimate > 0.0 && self.rtt_estimate.is_finite()) {
            v.push(("rtt_estimate", "must be positive"));
        }
        if !(self.t_fdbk > self.rtt_estimate) {
            v.push(("t_fdbk", "must exceed RTT"));
        }
        if !(self.t_p > self.rtt_estimate) {
            v.push(("t_p", "must exceed RTT"));
        }
        if !(self.decrease_factor > 0.0 && self.decrease_factor < 1.0) {
            v.push(("decrease_factor", "must be in (0,1)"));
        }
        if !(self.hold_band >= 0.0 && self.hold_band < 1.0) {
            v.push(("hold_band", "must be in [0,1)"));
        }
        v
    }
}

/// Probe carrying the path maximum of per-node delay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbePacket {
    pub bottleneck_delay: f64,
    pub hop_count: u32,
}

impl ProbePacket {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Applied by every forwarding node on the path.
pub fn on_probe_forward(probe: ProbePacket, node_delay: f64) -> ProbePacket {
    ProbePacket {
        bottleneck_delay: probe.bottleneck_delay.max(node_delay),
        hop_count: probe.hop_count + 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFeedback {
    /// Sustainable rate in packets/s.
    pub r_f: f64,
    pub hop_count: u32,
    pub issued_at: f64,
}

/// Converts a path measurement into a rate: the inverse of the slowest
/// per-packet node delay.
pub fn feedback_from_probe(probe: &ProbePacket, now: f64) -> Result<RateFeedback, TransportError> {
    if !(probe.bottleneck_delay > 0.0) {
        return Err(TransportError::DegenerateProbe);
    }
    Ok(RateFeedback {
        r_f: 1.0 / probe.bottleneck_delay,
        hop_count: probe.hop_count,
        issued_at: now,
    })
}

/// Rate needed to move `b` packets within `delta_re2a` seconds.
pub fn min_transmission_rate(b: u64, delta_re2a: f64) -> Result<f64, TransportError> {
    if b == 0 {
        return Ok(0.0);
    }
    if !(delta_re2a > 0.0) {
        return Err(TransportError::DeadlineExpired { remaining: b });
    }
    Ok(b as f64 / delta_re2a)
}

/// Increase fraction for a path of `hop_count` hops.
pub fn fraction_m(hop_count: u32) -> u32 {
    hop_count.clamp(1, MAX_FRACTION)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeliveryGoal {
    pub b_remaining: u64,
    /// Absolute event-to-action deadline.
    pub deadline: f64,
}

impl DeliveryGoal {
    pub fn delta_re2a(&self, now: f64) -> f64 {
        self.deadline - now
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeoutAction {
    /// Rate decreased, keep waiting.
    Decreased,
    /// Second silent period: switched to probing, a probe must be sent.
    SendProbe,
    /// Not in a feedback-driven phase.
    Ignored,
}

/// Sender-side rate state.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportState {
    pub phase: Phase,
    pub r_c: f64,
    pub r_min: f64,
    pub m: u32,
    pub missed_feedback: u32,
    pub rtt_estimate: f64,
    pub t_fdbk: f64,
    pub t_p: f64,
    last_issued: Option<f64>,
    pub last_r_f: Option<f64>,
}

impl TransportState {
    /// Fresh connection state in start-up with the floor derived from `goal`.
    pub fn start_connection(
        goal: &DeliveryGoal,
        cfg: &TransportConfig,
        now: f64,
        route_exists: bool,
    ) -> Result<Self, TransportError> {
        if !route_exists {
            return Err(TransportError::NoRoute);
        }
        let r_min = min_transmission_rate(goal.b_remaining, goal.delta_re2a(now))?;
        Ok(Self {
            phase: Phase::StartUp,
            r_c: 0.0,
            r_min,
            m: 1,
            missed_feedback: 0,
            rtt_estimate: cfg.rtt_estimate,
            t_fdbk: cfg.t_fdbk,
            t_p: cfg.t_p,
            last_issued: None,
            last_r_f: None,
        })
    }

    /// Sender pinned at a fixed rate, ignoring feedback.
    pub fn fixed(rate: f64, cfg: &TransportConfig) -> Self {
        Self {
            phase: Phase::Hold,
            r_c: rate,
            r_min: 0.0,
            m: 1,
            missed_feedback: 0,
            rtt_estimate: cfg.rtt_estimate,
            t_fdbk: cfg.t_fdbk,
            t_p: cfg.t_p,
            last_issued: None,
            last_r_f: None,
        }
    }

    /// Applies a receiver feedback. The first feedback after start-up jumps
    /// straight to the advertised rate; afterwards an increase closes `1/m`
    /// of the gap and a decrease follows the feedback down to the floor.
    pub fn apply_rate_feedback(&mut self, fb: &RateFeedback, hold_band: f64) -> Result<(), TransportError> {
        if let Some(last) = self.last_issued {
            if fb.issued_at <= last {
                return Err(TransportError::StaleFeedback {
                    issued_at: fb.issued_at,
                    last,
                });
            }
        }
        self.last_issued = Some(fb.issued_at);
        self.last_r_f = Some(fb.r_f);
        self.m = fraction_m(fb.hop_count);
        self.missed_feedback = 0;
        let r_f = fb.r_f;
        if self.phase == Phase::StartUp {
            self.r_c = r_f.max(self.r_min);
            self.phase = Phase::Hold;
            return Ok(());
        }
        if (r_f - self.r_c).abs() <= hold_band * r_f {
            self.phase = Phase::Hold;
        } else if r_f > self.r_c {
            self.phase = Phase::Increase;
            self.r_c = (self.r_c + (r_f - self.r_c) / self.m as f64).max(self.r_min);
        } else {
            self.phase = Phase::Decrease;
            self.r_c = r_f.max(self.r_min);
        }
        Ok(())
    }

    /// One feedback period elapsed without feedback.
    pub fn on_feedback_timeout(&mut self, decrease_factor: f64) -> TimeoutAction {
        if !self.phase.sends_data() {
            return TimeoutAction::Ignored;
        }
        self.missed_feedback += 1;
        self.r_c = (self.r_c * decrease_factor).max(self.r_min);
        if self.missed_feedback >= 2 {
            self.missed_feedback = 2;
            self.phase = Phase::Probe;
            TimeoutAction::SendProbe
        } else {
            TimeoutAction::Decreased
        }
    }

    /// Recomputes the floor from the remaining goal and lifts the rate to it.
    pub fn refresh_floor(&mut self, goal: &DeliveryGoal, now: f64) -> Result<(), TransportError> {
        self.r_min = min_transmission_rate(goal.b_remaining, goal.delta_re2a(now))?;
        self.r_c = self.r_c.max(self.r_min);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SendAction {
    Emit {
        seq: u64,
        retransmission: bool,
        /// Time of the next send opportunity.
        next_at: f64,
    },
    /// Active, but nothing is eligible for sending right now.
    Idle,
    /// Every packet of the goal is acknowledged.
    Complete,
    /// Phase does not carry data.
    NotSending,
}

/// Per-connection log row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionRow {
    pub time: f64,
    pub phase: Phase,
    pub r_c: f64,
    pub r_f: Option<f64>,
    pub r_min: f64,
    pub missed_feedback: u32,
    pub retransmit_count: u64,
}

/// Sender endpoint: rate state plus sequencing and retransmission bookkeeping.
#[derive(Debug, Clone)]
pub struct Sender {
    pub state: TransportState,
    cfg: TransportConfig,
    total: u64,
    deadline: f64,
    next_seq: u64,
    retx: RetxBuffer,
    retx_queue: std::collections::VecDeque<u64>,
    acked: u64,
    retransmit_count: u64,
    best_effort: bool,
    srtt: Option<f64>,
}

impl Sender {
    pub fn new(state: TransportState, cfg: TransportConfig, total: u64, deadline: f64) -> Self {
        Self {
            state,
            cfg,
            total,
            deadline,
            next_seq: 1,
            retx: RetxBuffer::new(),
            retx_queue: Default::default(),
            acked: 0,
            retransmit_count: 0,
            best_effort: false,
            srtt: None,
        }
    }

    pub fn config(&self) -> &TransportConfig {
        &self.cfg
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Packets still owed: unacknowledged ones with SACK, unsent ones without.
    pub fn goal(&self) -> DeliveryGoal {
        let done = if self.cfg.sack {
            self.acked
        } else {
            self.next_seq - 1
        };
        DeliveryGoal {
            b_remaining: self.total - done,
            deadline: self.deadline,
        }
    }

    pub fn all_sent(&self) -> bool {
        self.next_seq > self.total
    }

    pub fn retransmit_count(&self) -> u64 {
        self.retransmit_count
    }

    pub fn is_best_effort(&self) -> bool {
        self.best_effort
    }

    /// Keeps sending after the deadline passed, without a rate floor.
    pub fn continue_after_deadline(&mut self) {
        self.best_effort = true;
        self.state.r_min = 0.0;
    }

    /// Retransmission guard interval.
    pub fn rtt(&self) -> f64 {
        self.srtt.unwrap_or(0.0).max(self.state.rtt_estimate)
    }

    pub fn observe_rtt(&mut self, sample: f64) {
        self.srtt = Some(match self.srtt {
            None => sample,
            Some(s) => 0.875 * s + 0.125 * sample,
        });
    }

    pub fn tick_send(&mut self, now: f64) -> Result<SendAction, TransportError> {
        let goal = self.goal();
        if goal.b_remaining == 0 {
            return Ok(SendAction::Complete);
        }
        if !self.state.phase.sends_data() {
            return Ok(SendAction::NotSending);
        }
        if !self.best_effort {
            self.state.refresh_floor(&goal, now)?;
        }
        let (seq, retransmission) = if let Some(seq) = self.retx_queue.pop_front() {
            (seq, true)
        } else if !self.all_sent() {
            let s = self.next_seq;
            self.next_seq += 1;
            (s, false)
        } else {
            return Ok(SendAction::Idle);
        };
        if retransmission {
            self.retransmit_count += 1;
        }
        if self.cfg.sack {
            self.retx.on_sent(seq, now);
        }
        Ok(SendAction::Emit {
            seq,
            retransmission,
            next_at: now + 1.0 / self.state.r_c,
        })
    }

    /// Processes a SACK, queueing holes and stale tail packets.
    pub fn on_sack(&mut self, sack: &SackInfo, now: f64) -> Vec<u64> {
        if !self.cfg.sack {
            return Vec::new();
        }
        let rtt = self.rtt();
        let mut queued = on_sack(sack, &mut self.retx, now, rtt);
        // tail packets beyond the highest ack are invisible to the receiver
        if self.all_sent() {
            let max_acked = sack.max_acked();
            let stale_after = rtt + self.cfg.t_fdbk;
            let tail: Vec<u64> = self
                .retx
                .iter()
                .filter(|(&seq, r)| {
                    seq > max_acked
                        && now - r.last_sent > stale_after
                        && r.retransmit_at.map_or(true, |t| now - t >= rtt)
                })
                .map(|(&s, _)| s)
                .collect();
            for &s in &tail {
                self.retx.mark_retransmit(s, now);
            }
            queued.extend(tail);
        }
        for &s in &queued {
            if !self.retx_queue.contains(&s) {
                self.retx_queue.push_back(s);
            }
        }
        self.retx_queue.retain(|s| self.retx.contains(*s));
        self.acked = self.total - self.retx.len() as u64 - (self.total + 1 - self.next_seq);
        queued
    }

    pub fn log_row(&self, now: f64, r_f: Option<f64>) -> ConnectionRow {
        ConnectionRow {
            time: now,
            phase: self.state.phase,
            r_c: self.state.r_c,
            r_f,
            r_min: self.state.r_min,
            missed_feedback: self.state.missed_feedback,
            retransmit_count: self.retransmit_count,
        }
    }
}
