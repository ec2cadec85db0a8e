use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::reliability::{
    BudgetMode, ControllerConfig, DelayBudget, ReliabilityTargets, UpdatePolicy,
};
use crate::sim::{
    ChannelAccess, FaultMode, FaultTarget, LinkParams, LinkRef, NodeId, Role, Topology,
};
use crate::transport::TransportConfig;

use super::ScenarioError;

/// One rejected field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

impl Violation {
    fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub horizon: f64,
    pub seed: u64,
    pub repetitions: u32,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            horizon: 100.0,
            seed: 1,
            repetitions: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub packet_bits: f64,
    pub control_bits: f64,
    pub bit_rate_bps: f64,
    pub service_rate_pps: f64,
    pub range_m: f64,
    pub channel_access: ChannelAccess,
}

impl Default for RadioSection {
    fn default() -> Self {
        Self {
            packet_bits: 1000.0,
            control_bits: 200.0,
            bit_rate_bps: 250_000.0,
            service_rate_pps: 100.0,
            range_m: 20.0,
            channel_access: ChannelAccess::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Grid,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    /// Run sensors and the reliability controller at all.
    pub enabled: bool,
    pub sensors: u32,
    pub event_radius_m: f64,
    pub placement: Placement,
    /// Defaults to a point just off the event epicenter.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsink_position: Option<[f64; 2]>,
}

impl Default for FieldSection {
    fn default() -> Self {
        Self {
            enabled: true,
            sensors: 81,
            event_radius_m: 45.0,
            placement: Placement::Grid,
            subsink_position: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReliabilitySection {
    pub dr_d: u64,
    pub t_sa: f64,
    pub beta: f64,
    /// Decision interval length; defaults to `t_sa`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval_len: Option<f64>,
    pub f_init: f64,
    pub f_min: f64,
    pub f_cap: f64,
    /// Time at which the controller starts deciding; sensors run at
    /// `f_init` until then.
    pub warmup: f64,
    pub eq4_alt: bool,
    pub eq6_alt: bool,
    pub budget_mode: BudgetMode,
    pub delta_e2a: f64,
    pub ep_del: f64,
    pub a_del: f64,
}

impl Default for ReliabilitySection {
    fn default() -> Self {
        Self {
            dr_d: 200,
            t_sa: 1.0,
            beta: 0.05,
            interval_len: None,
            f_init: 1.0,
            f_min: 0.1,
            f_cap: 100.0,
            warmup: 0.0,
            eq4_alt: false,
            eq6_alt: false,
            budget_mode: BudgetMode::Literal,
            delta_e2a: 2.0,
            ep_del: 0.05,
            a_del: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CongestionSection {
    pub buffer_capacity: u32,
    pub epoch: f64,
}

impl Default for CongestionSection {
    fn default() -> Self {
        Self {
            buffer_capacity: 50,
            epoch: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SenderMode {
    /// Probe, feedback-driven rate and optional SACK recovery.
    RateControlled,
    /// Constant rate, no probing, no feedback.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSection {
    pub enabled: bool,
    pub mode: SenderMode,
    /// Hops on the chain between the two sub-sinks.
    pub hops: u32,
    pub hop_distance_m: f64,
    pub link_rate_pps: f64,
    pub bottleneck_rate_pps: f64,
    /// Index of the slow link along the chain, 0 = first hop.
    pub bottleneck_hop: u32,
    /// Loss probability on the last hop, both directions.
    pub loss_prob: f64,
    pub goal_packets: u64,
    /// Event-to-action bound of the transfer, relative to its start.
    pub deadline: f64,
    pub start_time: f64,
    /// Defaults to twice the path round-trip estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_fdbk: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_p: Option<f64>,
    /// Defaults to the no-load round trip computed from the chain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtt_estimate: Option<f64>,
    pub decrease_factor: f64,
    pub hold_band: f64,
    pub sack: bool,
    pub fixed_rate_pps: f64,
}

impl Default for TransportSection {
    fn default() -> Self {
        Self {
            enabled: false,
            mode: SenderMode::RateControlled,
            hops: 5,
            hop_distance_m: 15.0,
            link_rate_pps: 100.0,
            bottleneck_rate_pps: 50.0,
            bottleneck_hop: 2,
            loss_prob: 0.0,
            goal_packets: 1000,
            deadline: 60.0,
            start_time: 1.0,
            t_fdbk: None,
            t_p: None,
            rtt_estimate: None,
            decrease_factor: 0.5,
            hold_band: 0.02,
            sack: true,
            fixed_rate_pps: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    pub e_tx: f64,
    pub e_rx: f64,
}

impl Default for EnergySection {
    fn default() -> Self {
        Self {
            e_tx: 50e-6,
            e_rx: 25e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<[u32; 2]>,
    pub at: f64,
    pub mode: FaultMode,
}

/// Everything that determines a run except the seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub sim: SimSection,
    pub radio: RadioSection,
    pub field: FieldSection,
    pub reliability: ReliabilitySection,
    pub congestion: CongestionSection,
    pub transport: TransportSection,
    pub energy: EnergySection,
    pub faults: Vec<FaultSpec>,
}

/// Node layout of a built scenario.
#[derive(Debug, Clone)]
pub struct Layout {
    pub topology: Topology,
    pub sensors: Vec<NodeId>,
    pub subsink: NodeId,
    /// Far end of the transport chain when transport is enabled.
    pub peer: Option<NodeId>,
}

impl ScenarioConfig {
    /// Parses and validates a scenario file.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_toml(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validating.
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn interval_len(&self) -> f64 {
        self.reliability.interval_len.unwrap_or(self.reliability.t_sa)
    }

    pub fn targets(&self) -> ReliabilityTargets {
        let r = &self.reliability;
        ReliabilityTargets {
            dr_d: r.dr_d,
            t_sa: r.t_sa,
            beta: r.beta,
            interval_len: self.interval_len(),
        }
    }

    pub fn controller(&self) -> ControllerConfig {
        let r = &self.reliability;
        ControllerConfig {
            targets: self.targets(),
            f_min: r.f_min,
            f_cap: r.f_cap,
            f_init: r.f_init,
            policy: UpdatePolicy {
                eq4_alt: r.eq4_alt,
                eq6_alt: r.eq6_alt,
            },
            budget: DelayBudget {
                delta_e2a: r.delta_e2a,
                ep_del: r.ep_del,
                a_del: r.a_del,
            },
        }
    }

    /// No-load round trip along the transport chain: data forward, control
    /// packet back.
    pub fn chain_rtt(&self) -> f64 {
        let t = &self.transport;
        let r = &self.radio;
        let ca = r.channel_access.mean();
        let p = t.hop_distance_m / crate::sim::SIGNAL_SPEED;
        let fwd: f64 = (0..t.hops)
            .map(|h| 1.0 / self.chain_service_rate(h) + ca + r.packet_bits / r.bit_rate_bps + p)
            .sum();
        let back = t.hops as f64 * (ca + r.control_bits / r.bit_rate_bps + p);
        fwd + back
    }

    fn chain_service_rate(&self, hop: u32) -> f64 {
        let t = &self.transport;
        if hop == t.bottleneck_hop {
            t.bottleneck_rate_pps
        } else {
            t.link_rate_pps
        }
    }

    pub fn transport_config(&self) -> TransportConfig {
        let t = &self.transport;
        let rtt = t.rtt_estimate.unwrap_or_else(|| self.chain_rtt());
        TransportConfig {
            t_fdbk: t.t_fdbk.unwrap_or(2.0 * rtt),
            t_p: t.t_p.unwrap_or(2.0 * rtt),
            rtt_estimate: rtt,
            decrease_factor: t.decrease_factor,
            hold_band: t.hold_band,
            sack: t.sack,
        }
    }

    /// Builds nodes, links and routes. Sensors take ids `0..n`, the field
    /// sub-sink comes next, then chain relays and the peer sub-sink.
    pub fn build_layout(&self, seed: u64) -> Result<Layout, ScenarioError> {
        let mut topo = Topology::new();
        let r = &self.radio;
        let f = &self.field;
        let mut sensors = Vec::new();
        let mut center_offset = [0.0, 0.0];
        if f.enabled {
            let (points, offset) = match f.placement {
                Placement::Grid => grid_points(f.sensors, f.event_radius_m),
                Placement::Random => random_points(f.sensors, f.event_radius_m, seed),
            };
            center_offset = [offset, offset];
            for p in points {
                sensors.push(topo.add_node(Role::Sensor, p));
            }
        }
        let sub_pos = f.subsink_position.unwrap_or(center_offset);
        let subsink = topo.add_node(Role::SubSink, sub_pos);
        if f.enabled {
            let field: Vec<NodeId> = sensors.iter().copied().chain([subsink]).collect();
            for (i, &a) in field.iter().enumerate() {
                for &b in &field[i + 1..] {
                    if topo.distance(a, b) <= r.range_m {
                        topo.connect(a, b, r.bit_rate_bps, r.service_rate_pps)?;
                    }
                }
            }
        }
        let mut peer = None;
        if self.transport.enabled {
            let t = &self.transport;
            let mut prev = subsink;
            for hop in 0..t.hops {
                let role = if hop + 1 == t.hops {
                    Role::SubSink
                } else {
                    Role::Relay
                };
                let pos = [sub_pos[0] + (hop + 1) as f64 * t.hop_distance_m, sub_pos[1]];
                let next = topo.add_node(role, pos);
                let loss = if hop + 1 == t.hops { t.loss_prob } else { 0.0 };
                let rate = self.chain_service_rate(hop);
                for (a, b) in [(prev, next), (next, prev)] {
                    topo.add_link(
                        LinkRef::new(a, b),
                        LinkParams {
                            distance_m: t.hop_distance_m,
                            bit_rate_bps: r.bit_rate_bps,
                            service_rate_pps: if a == prev { rate } else { t.link_rate_pps },
                            loss_prob: loss,
                        },
                    )?;
                }
                prev = next;
            }
            peer = Some(prev);
        }
        topo.compute_routes();
        for fs in &self.faults {
            let target = match (fs.node, fs.link) {
                (Some(n), None) => FaultTarget::Node(NodeId(n)),
                (None, Some([a, b])) => FaultTarget::Link(LinkRef::new(NodeId(a), NodeId(b))),
                _ => return Err(ScenarioError::Parse("fault needs exactly one of node or link".into())),
            };
            topo.inject_fault(target, fs.at, fs.mode, 0.0)?;
        }
        Ok(Layout {
            topology: topo,
            sensors,
            subsink,
            peer,
        })
    }

    /// Every violation in the config, not just the first.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut need = |ok: bool, field: &str, reason: &str| {
            if !ok {
                v.push(Violation::new(field, reason));
            }
        };
        let positive = |x: f64| x > 0.0 && x.is_finite();

        let s = &self.sim;
        need(positive(s.horizon), "sim.horizon", "must be positive");
        need(s.repetitions >= 1, "sim.repetitions", "must be at least 1");

        let r = &self.radio;
        need(positive(r.packet_bits), "radio.packet_bits", "must be positive");
        need(positive(r.control_bits), "radio.control_bits", "must be positive");
        need(positive(r.bit_rate_bps), "radio.bit_rate_bps", "must be positive");
        need(positive(r.service_rate_pps), "radio.service_rate_pps", "must be positive");
        need(positive(r.range_m), "radio.range_m", "must be positive");
        if let Err(reason) = r.channel_access.validate() {
            need(false, "radio.channel_access", reason);
        }

        let f = &self.field;
        if f.enabled {
            need(f.sensors >= 1, "field.sensors", "must be at least 1");
            need(positive(f.event_radius_m), "field.event_radius_m", "must be positive");
        }

        let rel = &self.reliability;
        for (field, reason) in self.targets().validate() {
            need(false, &format!("reliability.{field}"), reason);
        }
        need(positive(rel.f_min), "reliability.f_min", "must be positive");
        need(rel.f_cap >= rel.f_min && rel.f_cap.is_finite(), "reliability.f_cap", "must be at least f_min");
        need(
            rel.f_init >= rel.f_min && rel.f_init <= rel.f_cap,
            "reliability.f_init",
            "must lie in [f_min, f_cap]",
        );
        need(rel.warmup >= 0.0 && rel.warmup.is_finite(), "reliability.warmup", "must be non-negative");
        need(rel.delta_e2a >= 0.0, "reliability.delta_e2a", "must be non-negative");
        need(rel.ep_del >= 0.0, "reliability.ep_del", "must be non-negative");
        need(rel.a_del >= 0.0, "reliability.a_del", "must be non-negative");

        need(positive(self.congestion.epoch), "congestion.epoch", "must be positive");

        let t = &self.transport;
        if t.enabled {
            need(t.hops >= 1, "transport.hops", "must be at least 1");
            need(positive(t.hop_distance_m), "transport.hop_distance_m", "must be positive");
            need(positive(t.link_rate_pps), "transport.link_rate_pps", "must be positive");
            need(positive(t.bottleneck_rate_pps), "transport.bottleneck_rate_pps", "must be positive");
            need(t.bottleneck_hop < t.hops.max(1), "transport.bottleneck_hop", "must be below hops");
            need((0.0..1.0).contains(&t.loss_prob), "transport.loss_prob", "must be in [0,1)");
            need(t.goal_packets >= 1, "transport.goal_packets", "must be at least 1");
            need(positive(t.deadline), "transport.deadline", "must be positive");
            need(t.start_time >= 0.0 && t.start_time.is_finite(), "transport.start_time", "must be non-negative");
            need(positive(t.fixed_rate_pps), "transport.fixed_rate_pps", "must be positive");
            for (field, reason) in self.transport_config().validate() {
                need(false, &format!("transport.{field}"), reason);
            }
        }

        let e = &self.energy;
        need(e.e_tx >= 0.0 && e.e_tx.is_finite(), "energy.e_tx", "must be non-negative");
        need(e.e_rx >= 0.0 && e.e_rx.is_finite(), "energy.e_rx", "must be non-negative");

        for (i, fs) in self.faults.iter().enumerate() {
            need(
                fs.node.is_some() != fs.link.is_some(),
                &format!("faults[{i}]"),
                "needs exactly one of node or link",
            );
            need(fs.at >= 0.0 && fs.at.is_finite(), &format!("faults[{i}].at"), "must be non-negative");
        }

        // topology checks only make sense once the numbers are sane
        if v.is_empty() {
            match self.build_layout(self.sim.seed) {
                Ok(layout) => {
                    for &s in &layout.sensors {
                        if !layout.topology.has_route(s, layout.subsink) {
                            v.push(Violation::new(
                                "radio.range_m",
                                format!("sensor {s} has no route to the sub-sink"),
                            ));
                        }
                    }
                }
                Err(ScenarioError::Sim(crate::sim::SimError::UnknownTarget)) => {
                    v.push(Violation::new("faults", "refers to a missing node or link"));
                }
                Err(e) => v.push(Violation::new("field", e.to_string())),
            }
        }
        v
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(v))
        }
    }
}

/// Centred square grid whose corners touch the event circle. Also returns
/// an offset from the epicenter that is never a grid point.
fn grid_points(n: u32, radius: f64) -> (Vec<[f64; 2]>, f64) {
    let side = (n as f64).sqrt().ceil().max(1.0) as u32;
    let spacing = if side > 1 {
        radius * std::f64::consts::SQRT_2 / (side - 1) as f64
    } else {
        radius
    };
    let half = (side - 1) as f64 / 2.0;
    let points = (0..n)
        .map(|k| {
            let (row, col) = (k / side, k % side);
            [
                (col as f64 - half) * spacing,
                (row as f64 - half) * spacing,
            ]
        })
        .collect();
    // odd sides put a point on the epicenter, even sides at half spacings
    let offset = if side % 2 == 1 { spacing / 2.0 } else { spacing / 4.0 };
    (points, offset)
}

/// Uniform points in the event disc.
fn random_points(n: u32, radius: f64, seed: u64) -> (Vec<[f64; 2]>, f64) {
    use rand::Rng;
    let mut rng = crate::sim::RngStream::new(seed, u64::MAX);
    let points = (0..n)
        .map(|_| {
            let r = radius * rng.gen::<f64>().sqrt();
            let th = rng.gen::<f64>() * std::f64::consts::TAU;
            [r * th.cos(), r * th.sin()]
        })
        .collect();
    (points, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = ScenarioConfig::default();
        assert_eq!(cfg.violations(), vec![]);
        assert_eq!(cfg.field.sensors, 81);
        assert_eq!(cfg.field.event_radius_m, 45.0);
    }

    #[test]
    fn grid_fits_radius() {
        let (pts, offset) = grid_points(81, 45.0);
        assert_eq!(pts.len(), 81);
        let far = pts.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max);
        assert!((far - 45.0).abs() < 1e-9);
        assert!((offset - 45.0 * 2f64.sqrt() / 16.0).abs() < 1e-12);
    }

    #[test]
    fn default_subsink_never_sits_on_a_sensor() {
        for n in 1..=100 {
            let (pts, offset) = grid_points(n, 20.0);
            let nearest = pts
                .iter()
                .map(|p| (p[0] - offset).hypot(p[1] - offset))
                .fold(f64::INFINITY, f64::min);
            assert!(nearest > 1e-9, "n = {n}");
        }
    }

    #[test]
    fn beta_zero_rejected() {
        let mut cfg = ScenarioConfig::default();
        cfg.reliability.beta = 0.0;
        let v = cfg.violations();
        assert_eq!(v, vec![Violation::new("reliability.beta", "must be in (0,1)")]);
    }

    #[test]
    fn feedback_period_below_rtt_rejected() {
        let mut cfg = ScenarioConfig::default();
        cfg.transport.enabled = true;
        cfg.transport.t_fdbk = Some(cfg.chain_rtt() * 0.5);
        let v = cfg.violations();
        assert!(v.contains(&Violation::new("transport.t_fdbk", "must exceed RTT")), "{v:?}");
    }

    #[test]
    fn all_violations_reported() {
        let mut cfg = ScenarioConfig::default();
        cfg.reliability.beta = 1.5;
        cfg.sim.horizon = -1.0;
        cfg.congestion.epoch = 0.0;
        assert_eq!(cfg.violations().len(), 3);
    }

    #[test]
    fn disconnected_field_rejected() {
        let mut cfg = ScenarioConfig::default();
        cfg.radio.range_m = 1.0;
        let v = cfg.violations();
        assert!(!v.is_empty());
        assert!(v.iter().all(|x| x.field == "radio.range_m"));
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ScenarioConfig::default();
        cfg.transport.enabled = true;
        cfg.transport.t_fdbk = Some(0.5);
        cfg.faults.push(FaultSpec {
            node: Some(3),
            link: None,
            at: 10.0,
            mode: FaultMode::DropAll,
        });
        let text = cfg.to_toml();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        let err = ScenarioConfig::from_toml("[sim]\nhorizn = 3\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse(_)));
    }

    #[test]
    fn chain_layout() {
        let mut cfg = ScenarioConfig::default();
        cfg.field.enabled = false;
        cfg.transport.enabled = true;
        let l = cfg.build_layout(1).unwrap();
        assert_eq!(l.topology.len(), 6);
        let peer = l.peer.unwrap();
        let path = l.topology.static_path(l.subsink, peer).unwrap();
        assert_eq!(path.len(), 6);
        let slow = l.topology.link(LinkRef::new(path[2], path[3])).unwrap();
        assert_eq!(slow.service_rate_pps, 50.0);
    }
}
