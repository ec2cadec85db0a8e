//! Metric extraction from a completed run: convergence time of the
//! reliability controller, energy from per-packet costs, and throughput and
//! delay of sub-sink to sub-sink data.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::reliability::{classify_condition, ControllerRow, NetworkCondition};
use crate::sim::{NodeId, PacketClass, SimulationTrace, TraceKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no application-layer deliveries in trace")]
    NoDeliveries,
}

/// Per-packet energy costs and the per-node transmit/receive counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub e_tx: f64,
    pub e_rx: f64,
    pub tx_count: BTreeMap<NodeId, u64>,
    pub rx_count: BTreeMap<NodeId, u64>,
}

impl EnergyLedger {
    pub fn new(e_tx: f64, e_rx: f64) -> Self {
        Self {
            e_tx,
            e_rx,
            tx_count: BTreeMap::new(),
            rx_count: BTreeMap::new(),
        }
    }

    /// Counts every hop transmission and reception in the trace.
    pub fn from_trace(trace: &SimulationTrace, e_tx: f64, e_rx: f64) -> Self {
        let mut ledger = Self::new(e_tx, e_rx);
        for e in trace.events() {
            match e.kind {
                TraceKind::Send => *ledger.tx_count.entry(e.node).or_default() += 1,
                TraceKind::Receive => *ledger.rx_count.entry(e.node).or_default() += 1,
                _ => {}
            }
        }
        ledger
    }

    pub fn per_node(&self) -> BTreeMap<NodeId, f64> {
        let mut out = BTreeMap::new();
        for (&n, &c) in &self.tx_count {
            *out.entry(n).or_insert(0.0) += c as f64 * self.e_tx;
        }
        for (&n, &c) in &self.rx_count {
            *out.entry(n).or_insert(0.0) += c as f64 * self.e_rx;
        }
        out
    }

    pub fn total(&self) -> f64 {
        self.per_node().values().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub total: f64,
    pub per_node: BTreeMap<NodeId, f64>,
}

pub fn total_energy(trace: &SimulationTrace, e_tx: f64, e_rx: f64) -> EnergyReport {
    let ledger = EnergyLedger::from_trace(trace, e_tx, e_rx);
    let per_node = ledger.per_node();
    EnergyReport {
        total: per_node.values().sum(),
        per_node,
    }
}

/// End time of the first interval from which every later interval is
/// adequate with no congestion. `None` if the log does not end that way.
pub fn convergence_time(rows: &[ControllerRow], beta: f64) -> Option<f64> {
    let adequate =
        |r: &ControllerRow| classify_condition(r.alpha, r.cn, beta) == NetworkCondition::AdequateRelNoCong;
    let tail = rows.iter().rev().take_while(|r| adequate(r)).count();
    if tail == 0 {
        return None;
    }
    Some(rows[rows.len() - tail].end)
}

/// Unique sub-sink to sub-sink data packets delivered at the destination.
pub fn aggregate_throughput(trace: &SimulationTrace) -> u64 {
    let mut seen = HashSet::new();
    trace
        .events()
        .iter()
        .filter(|e| e.kind == TraceKind::Deliver && e.class == Some(PacketClass::TransportData))
        .filter(|e| seen.insert(e.seq))
        .count() as u64
}

/// Mean of first delivery time minus original generation time over unique
/// sub-sink to sub-sink data packets.
pub fn average_packet_delay(trace: &SimulationTrace) -> Result<f64, MetricsError> {
    let mut seen = HashSet::new();
    let mut sum = 0.0;
    let mut n = 0u64;
    for e in trace.events() {
        if e.kind == TraceKind::Deliver
            && e.class == Some(PacketClass::TransportData)
            && seen.insert(e.seq)
        {
            sum += e.time - e.gen_time;
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::NoDeliveries);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub convergence_time: Option<f64>,
    pub total_energy: f64,
    pub aggregate_throughput: u64,
    pub average_packet_delay: Option<f64>,
    pub per_interval: Vec<ControllerRow>,
    pub per_run_seed: u64,
}

impl MetricsReport {
    pub fn extract(
        trace: &SimulationTrace,
        rows: &[ControllerRow],
        e_tx: f64,
        e_rx: f64,
        beta: f64,
        seed: u64,
    ) -> Self {
        Self {
            convergence_time: convergence_time(rows, beta),
            total_energy: total_energy(trace, e_tx, e_rx).total,
            aggregate_throughput: aggregate_throughput(trace),
            average_packet_delay: average_packet_delay(trace).ok(),
            per_interval: rows.to_vec(),
            per_run_seed: seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{TraceEvent, TraceKind};
    use NetworkCondition::*;

    fn row(i: u64, cond: NetworkCondition) -> ControllerRow {
        let (alpha, cn) = match cond {
            LowRelNoCong => (0.5, false),
            LowRelCong => (0.5, true),
            EarlyRelCong => (1.5, true),
            EarlyRelNoCong => (1.5, false),
            AdequateRelNoCong => (1.0, false),
        };
        ControllerRow {
            interval: i,
            start: i as f64,
            end: (i + 1) as f64,
            dr_o: 0,
            dr_d: 1,
            alpha,
            t_i: f64::INFINITY,
            cn,
            condition: cond,
            f_i: 1.0,
            f_next: 1.0,
            x: 1,
            late: 0,
            timely_literal: 0,
            timely_full: 0,
        }
    }

    #[test]
    fn convergence_examples() {
        let mut rows = vec![row(0, LowRelNoCong), row(1, LowRelCong)];
        rows.extend((2..10).map(|i| row(i, AdequateRelNoCong)));
        assert_eq!(convergence_time(&rows, 0.05), Some(3.0));
        let all: Vec<_> = (0..5).map(|i| row(i, AdequateRelNoCong)).collect();
        assert_eq!(convergence_time(&all, 0.05), Some(1.0));
        let alt: Vec<_> = (0..10)
            .map(|i| row(i, if i % 2 == 0 { AdequateRelNoCong } else { LowRelNoCong }))
            .collect();
        assert_eq!(convergence_time(&alt, 0.05), None);
        assert_eq!(convergence_time(&[], 0.05), None);
    }

    fn ev(time: f64, node: u32, kind: TraceKind, seq: u64, gen: f64) -> TraceEvent {
        TraceEvent {
            time,
            node: NodeId(node),
            kind,
            packet_id: seq,
            class: Some(PacketClass::TransportData),
            seq,
            gen_time: gen,
            reason: None,
        }
    }

    #[test]
    fn energy_linear_combination() {
        let mut events = Vec::new();
        for i in 0..1000 {
            events.push(ev(i as f64, 0, TraceKind::Send, i, 0.0));
            events.push(ev(i as f64, 1, TraceKind::Receive, i, 0.0));
        }
        let t = SimulationTrace::from_events(events, 0);
        let e = total_energy(&t, 50e-6, 25e-6);
        assert!((e.total - 0.075).abs() < 1e-15);
        assert_eq!(e.per_node.len(), 2);
        assert_eq!(total_energy(&SimulationTrace::new(), 50e-6, 25e-6).total, 0.0);
    }

    #[test]
    fn throughput_dedups() {
        let mut events: Vec<_> = (1..=100)
            .map(|s| ev(s as f64, 5, TraceKind::Deliver, s, 0.0))
            .collect();
        // 20 duplicates from retransmission
        events.extend((1..=20).map(|s| ev(200.0 + s as f64, 5, TraceKind::Deliver, s, 0.0)));
        let t = SimulationTrace::from_events(events, 0);
        assert_eq!(aggregate_throughput(&t), 100);
        let lossy = SimulationTrace::from_events(
            (1..=80).map(|s| ev(s as f64, 5, TraceKind::Deliver, s, 0.0)).collect(),
            0,
        );
        assert_eq!(aggregate_throughput(&lossy), 80);
    }

    #[test]
    fn delay_mean_and_guard() {
        let t = SimulationTrace::from_events(
            vec![
                ev(1.1, 5, TraceKind::Deliver, 1, 1.0),
                ev(2.3, 5, TraceKind::Deliver, 2, 2.0),
                ev(3.0, 5, TraceKind::Deliver, 1, 1.0),
            ],
            0,
        );
        let d = average_packet_delay(&t).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
        let one = SimulationTrace::from_events(vec![ev(0.5, 5, TraceKind::Deliver, 1, 0.0)], 0);
        assert_eq!(average_packet_delay(&one).unwrap(), 0.5);
        assert_eq!(
            average_packet_delay(&SimulationTrace::new()),
            Err(MetricsError::NoDeliveries)
        );
    }

    #[test]
    fn energy_additive_over_disjoint_nodes() {
        let a: Vec<_> = (0..10).map(|i| ev(i as f64, 0, TraceKind::Send, i, 0.0)).collect();
        let b: Vec<_> = (0..7).map(|i| ev(i as f64, 1, TraceKind::Receive, i, 0.0)).collect();
        let mut both = a.clone();
        both.extend(b.clone());
        both.sort_by(|x, y| x.time.total_cmp(&y.time));
        let ta = SimulationTrace::from_events(a, 0);
        let tb = SimulationTrace::from_events(b, 0);
        let tab = SimulationTrace::from_events(both, 0);
        let e = |t: &SimulationTrace| total_energy(t, 50e-6, 25e-6).total;
        assert!((e(&tab) - (e(&ta) + e(&tb))).abs() < 1e-18);
    }
}
