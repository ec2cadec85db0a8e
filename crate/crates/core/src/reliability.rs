//! Sub-sink side of sensor to sub-sink communication.
//!
//! Every decision interval the sub-sink counts the data packets that arrived
//! within the delay bound `t_sa`, derives the reliability indicator
//! `alpha = DR_o / DR_d`, classifies the network condition together with the
//! aggregated congestion bit and computes the reporting frequency that is
//! broadcast back to the sources:
//!
//! | condition              | next frequency                      |
//! |------------------------|-------------------------------------|
//! | early, no congestion   | `f * T_i / T_sa`                    |
//! | early, congestion      | `min(f * T_i / T_sa, f * T_i / T_sa)` |
//! | low, no congestion     | `f * DR_d / DR_o`                   |
//! | low, congestion        | `f ^ (DR_o / (DR_d * x))`           |
//! | adequate, no congestion| `f`                                 |
//!
//! The result is clamped into `[f_min, f_cap]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sim::DelayBreakdown;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("desired reliability must be at least one packet")]
    InvalidTarget,
    #[error("interval statistics inconsistent with condition {0}")]
    InconsistentStats(NetworkCondition),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTargets {
    /// Desired on-time packets per decision interval.
    pub dr_d: u64,
    /// Sensor to sub-sink delay bound, seconds.
    pub t_sa: f64,
    /// Tolerance around `alpha = 1`.
    pub beta: f64,
    pub interval_len: f64,
}

impl ReliabilityTargets {
    pub fn validate(&self) -> Vec<(&'static str, &'static str)> {
        let mut v = Vec::new();
        if self.dr_d < 1 {
            v.push(("dr_d", "must be at least 1"));
        }
        if !(self.t_sa > 0.0 && self.t_sa.is_finite()) {
            v.push(("t_sa", "must be positive"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            v.push(("beta", "must be in (0,1)"));
        }
        if !(self.interval_len > 0.0 && self.interval_len.is_finite()) {
            v.push(("interval_len", "must be positive"));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBounds {
    pub f_min: f64,
    pub f_cap: f64,
    /// Lowest frequency in force during an interval that reported congestion.
    pub f_max_observed: Option<f64>,
}

impl FrequencyBounds {
    pub fn new(f_min: f64, f_cap: f64) -> Self {
        Self {
            f_min,
            f_cap,
            f_max_observed: None,
        }
    }

    pub fn clamp(&self, f: f64) -> f64 {
        f.clamp(self.f_min, self.f_cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NetworkCondition {
    EarlyRelNoCong,
    EarlyRelCong,
    LowRelNoCong,
    LowRelCong,
    AdequateRelNoCong,
}

impl NetworkCondition {
    pub const ALL: [NetworkCondition; 5] = [
        NetworkCondition::EarlyRelNoCong,
        NetworkCondition::EarlyRelCong,
        NetworkCondition::LowRelNoCong,
        NetworkCondition::LowRelCong,
        NetworkCondition::AdequateRelNoCong,
    ];

    pub fn is_congested(self) -> bool {
        matches!(self, Self::EarlyRelCong | Self::LowRelCong)
    }

    pub fn is_low(self) -> bool {
        matches!(self, Self::LowRelCong | Self::LowRelNoCong)
    }
}

impl fmt::Display for NetworkCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Opt-in alternatives for the two ambiguous update rules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdatePolicy {
    /// Early/congested: `min(f T_i/T_sa, f DR_d/DR_o)` instead of the literal form.
    pub eq4_alt: bool,
    /// Low/congested: multiplicative `f DR_o/(DR_d x)` instead of the exponent form.
    pub eq6_alt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBudget {
    /// Event-to-action bound.
    pub delta_e2a: f64,
    /// Event processing delay at the sub-sink.
    pub ep_del: f64,
    /// Action delay.
    pub a_del: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetMode {
    /// Only buffering counts toward the transport share of the budget.
    #[default]
    Literal,
    /// All four per-hop components count.
    FullSum,
}

pub fn check_delay_budget(budget: &DelayBudget, observed: &DelayBreakdown, mode: BudgetMode) -> bool {
    let transport = match mode {
        BudgetMode::Literal => observed.b_del,
        BudgetMode::FullSum => observed.total(),
    };
    budget.delta_e2a >= transport + budget.ep_del + budget.a_del
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrival {
    OnTime,
    Late,
}

/// Accounting for one decision interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalStats {
    pub index: u64,
    pub start: f64,
    pub dr_o: u64,
    /// Seconds from interval start to the `dr_d`-th on-time arrival, or +inf.
    pub t_i: f64,
    pub cn: bool,
    pub f_i: f64,
    /// Consecutive low-reliability-with-congestion count in force.
    pub x: u32,
    pub late: u64,
    pub timely_literal: u64,
    pub timely_full: u64,
}

impl IntervalStats {
    pub fn open(index: u64, start: f64, f_i: f64, x: u32) -> Self {
        Self {
            index,
            start,
            dr_o: 0,
            t_i: f64::INFINITY,
            cn: false,
            f_i,
            x: x.max(1),
            late: 0,
            timely_literal: 0,
            timely_full: 0,
        }
    }

    /// Counts an arriving data packet. Only on-time packets contribute to
    /// `dr_o` and to the congestion verdict.
    pub fn record_packet_arrival(
        &mut self,
        gen_time: f64,
        cn: bool,
        now: f64,
        targets: &ReliabilityTargets,
    ) -> Arrival {
        if now - gen_time <= targets.t_sa {
            self.dr_o += 1;
            if self.dr_o == targets.dr_d {
                self.t_i = now - self.start;
            }
            self.cn |= cn;
            Arrival::OnTime
        } else {
            self.late += 1;
            Arrival::Late
        }
    }
}

pub fn reliability_indicator(dr_o: u64, dr_d: u64) -> Result<f64, ControlError> {
    if dr_d == 0 {
        return Err(ControlError::InvalidTarget);
    }
    Ok(dr_o as f64 / dr_d as f64)
}

/// Maps `(alpha, cn)` onto exactly one condition. Under congestion the tie
/// `alpha == 1` counts as early reliability.
pub fn classify_condition(alpha: f64, cn: bool, beta: f64) -> NetworkCondition {
    use NetworkCondition::*;
    if cn {
        if alpha < 1.0 {
            LowRelCong
        } else {
            EarlyRelCong
        }
    } else if alpha < 1.0 - beta {
        LowRelNoCong
    } else if alpha > 1.0 + beta {
        EarlyRelNoCong
    } else {
        AdequateRelNoCong
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyUpdate {
    pub f_next: f64,
    pub x_next: u32,
    /// Value before clamping into the frequency bounds.
    pub unclamped: f64,
}

pub fn update_frequency(
    f_i: f64,
    cond: NetworkCondition,
    stats: &IntervalStats,
    targets: &ReliabilityTargets,
    bounds: &FrequencyBounds,
    policy: UpdatePolicy,
) -> Result<FrequencyUpdate, ControlError> {
    use NetworkCondition::*;
    if targets.dr_d == 0 {
        return Err(ControlError::InvalidTarget);
    }
    let dr_o = stats.dr_o as f64;
    let dr_d = targets.dr_d as f64;
    let reached = stats.t_i.is_finite() && stats.dr_o >= targets.dr_d;
    match cond {
        LowRelCong | LowRelNoCong if reached => return Err(ControlError::InconsistentStats(cond)),
        EarlyRelCong | EarlyRelNoCong if !stats.t_i.is_finite() => {
            return Err(ControlError::InconsistentStats(cond))
        }
        _ => {}
    }
    let (unclamped, x_next) = match cond {
        EarlyRelNoCong => (f_i * stats.t_i / targets.t_sa, 1),
        EarlyRelCong => {
            let by_time = f_i * stats.t_i / targets.t_sa;
            let second = if policy.eq4_alt {
                f_i * dr_d / dr_o
            } else {
                by_time
            };
            (by_time.min(second), 1)
        }
        LowRelNoCong => {
            if stats.dr_o == 0 {
                (bounds.f_cap, 1)
            } else {
                (f_i * dr_d / dr_o, 1)
            }
        }
        LowRelCong => {
            let x = stats.x.max(1) as f64;
            let f = if policy.eq6_alt {
                f_i * dr_o / (dr_d * x)
            } else {
                // never let the exponent raise a sub-unity frequency
                f_i.min(f_i.powf(dr_o / (dr_d * x)))
            };
            (f, stats.x.max(1) + 1)
        }
        AdequateRelNoCong => (f_i, 1),
    };
    Ok(FrequencyUpdate {
        f_next: bounds.clamp(unclamped),
        x_next,
        unclamped,
    })
}

/// One logged decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerRow {
    pub interval: u64,
    pub start: f64,
    pub end: f64,
    pub dr_o: u64,
    pub dr_d: u64,
    pub alpha: f64,
    pub t_i: f64,
    pub cn: bool,
    pub condition: NetworkCondition,
    pub f_i: f64,
    pub f_next: f64,
    pub x: u32,
    pub late: u64,
    pub timely_literal: u64,
    pub timely_full: u64,
}

/// Frequency announcement flooded to the sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBroadcast {
    pub interval: u64,
    pub frequency: f64,
    pub issued_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub targets: ReliabilityTargets,
    pub f_min: f64,
    pub f_cap: f64,
    pub f_init: f64,
    pub policy: UpdatePolicy,
    pub budget: DelayBudget,
}

/// Per-sub-sink controller state.
#[derive(Debug, Clone)]
pub struct ReliabilityController {
    cfg: ControllerConfig,
    bounds: FrequencyBounds,
    stats: IntervalStats,
}

impl ReliabilityController {
    pub fn new(cfg: ControllerConfig, start: f64) -> Self {
        let bounds = FrequencyBounds::new(cfg.f_min, cfg.f_cap);
        let f0 = bounds.clamp(cfg.f_init);
        Self {
            cfg,
            bounds,
            stats: IntervalStats::open(0, start, f0, 1),
        }
    }

    pub fn frequency(&self) -> f64 {
        self.stats.f_i
    }

    pub fn stats(&self) -> &IntervalStats {
        &self.stats
    }

    pub fn bounds(&self) -> &FrequencyBounds {
        &self.bounds
    }

    pub fn interval_end(&self) -> f64 {
        self.stats.start + self.cfg.targets.interval_len
    }

    /// Records an arriving sensor data packet along with its accumulated
    /// path delay for the event-to-action budget check.
    pub fn record_arrival(&mut self, gen_time: f64, cn: bool, now: f64, path: &DelayBreakdown) -> Arrival {
        let arrival = self
            .stats
            .record_packet_arrival(gen_time, cn, now, &self.cfg.targets);
        if arrival == Arrival::OnTime {
            let b = &self.cfg.budget;
            self.stats.timely_literal += check_delay_budget(b, path, BudgetMode::Literal) as u64;
            self.stats.timely_full += check_delay_budget(b, path, BudgetMode::FullSum) as u64;
        }
        arrival
    }

    /// Closes the running interval at `now`, returns its decision row and the
    /// broadcast carrying the next frequency, and opens the next interval.
    pub fn close_interval(&mut self, now: f64) -> Result<(ControllerRow, FrequencyBroadcast), ControlError> {
        let t = &self.cfg.targets;
        let s = &self.stats;
        let alpha = reliability_indicator(s.dr_o, t.dr_d)?;
        let condition = classify_condition(alpha, s.cn, t.beta);
        let upd = update_frequency(s.f_i, condition, s, t, &self.bounds, self.cfg.policy)?;
        if s.cn {
            let seen = self.bounds.f_max_observed.get_or_insert(s.f_i);
            *seen = seen.min(s.f_i);
        }
        let row = ControllerRow {
            interval: s.index,
            start: s.start,
            end: now,
            dr_o: s.dr_o,
            dr_d: t.dr_d,
            alpha,
            t_i: s.t_i,
            cn: s.cn,
            condition,
            f_i: s.f_i,
            f_next: upd.f_next,
            x: s.x,
            late: s.late,
            timely_literal: s.timely_literal,
            timely_full: s.timely_full,
        };
        let bcast = FrequencyBroadcast {
            interval: s.index,
            frequency: upd.f_next,
            issued_at: now,
        };
        self.stats = IntervalStats::open(s.index + 1, now, upd.f_next, upd.x_next);
        Ok((row, bcast))
    }
}
