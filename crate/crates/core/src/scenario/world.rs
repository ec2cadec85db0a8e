//! The simulated network: sensors reporting to a sub-sink under frequency
//! control, and an optional sub-sink to sub-sink transfer over a relay chain.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::congestion::{mark_packet, CnFlag, EnqueueResult, NodeBuffer};
use crate::reliability::{ControllerRow, ReliabilityController};
use crate::sim::{
    ChannelAccess, DelayBreakdown, DropReason, EventHandle, FaultMode, Kernel, LinkRef, NodeId,
    PacketClass, RngStream, SimError, SimEvent, SimulationTrace, Topology, TraceKind,
};
use crate::transport::{
    on_probe_forward, ConnectionRow, DeliveryGoal, Phase, ProbePacket, RateFeedback, Receiver,
    SackInfo, SendAction, Sender, TimeoutAction, TransportConfig, TransportError, TransportState,
};

use super::config::{ScenarioConfig, SenderMode};
use super::ScenarioError;

/// Relative tolerance for the end-to-end delay bookkeeping check.
const CAUSALITY_TOL: f64 = 1e-9;
/// Stream id for the sensor phase draw, clear of per-node streams.
const PHASE_STREAM: u64 = 1 << 40;

/// A simulated datagram.
#[derive(Debug, Clone)]
pub struct Packet {
    pub id: u64,
    pub class: PacketClass,
    pub origin: NodeId,
    pub dest: NodeId,
    /// Application generation time, kept across retransmissions.
    pub gen_time: f64,
    /// Time this instance entered the network.
    pub injected_at: f64,
    pub seq: u64,
    pub cn: CnFlag,
    /// Path maximum of per-node delay and hop count.
    pub path: ProbePacket,
    pub delay: DelayBreakdown,
    pub feedback: Option<(RateFeedback, SackInfo)>,
}

/// Frequency broadcast travelling down the reverse routing tree. One
/// message carries the copies still owed to every sensor below it.
#[derive(Debug, Clone)]
struct Flood {
    msg: u64,
    copy_base: u64,
    interval: u64,
    frequency: f64,
    issued_at: f64,
    elapsed: f64,
    targets: Vec<NodeId>,
}

#[derive(Debug)]
enum Ev {
    Generate,
    Depart {
        pkt: Box<Packet>,
        next: NodeId,
        rest: f64,
    },
    Arrive(Box<Packet>),
    Flood(Box<Flood>),
    IntervalClose,
    TransportStart,
    SenderTick,
    FeedbackTimeout,
    ProbeTimer,
    ReceiverFeedback,
}

impl Ev {
    /// Packet instances carried by a pending event.
    fn carried(&self) -> u64 {
        match self {
            Ev::Depart { .. } | Ev::Arrive(_) => 1,
            Ev::Flood(f) => f.targets.len() as u64,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone)]
struct SensorApp {
    f: f64,
    /// Fraction of a period by which this sensor is offset.
    phase: f64,
    seq: u64,
    next: Option<EventHandle>,
}

/// Outcome of the sub-sink to sub-sink transfer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferSummary {
    pub completed_at: Option<f64>,
    pub unique_received: u64,
    pub retransmissions: u64,
    pub feedback_sent: u64,
    pub feedback_applied: u64,
    pub first_feedback_at: Option<f64>,
    pub start_error: Option<TransportError>,
}

struct Connection {
    tcfg: TransportConfig,
    fixed: bool,
    sender: Option<Sender>,
    receiver: Receiver,
    gen_times: Vec<f64>,
    next_allowed: f64,
    tick: Option<EventHandle>,
    timeout: Option<EventHandle>,
    probe_timer: Option<EventHandle>,
    probe_sent_at: Option<f64>,
    probes: u64,
    rx_timer: bool,
    log: Vec<ConnectionRow>,
    summary: TransferSummary,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: SimulationTrace,
    pub decisions: Vec<ControllerRow>,
    pub connection: Vec<ConnectionRow>,
    pub transfer: Option<TransferSummary>,
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    topo: Topology,
    sensors: Vec<NodeId>,
    subsink: NodeId,
    peer: Option<NodeId>,
    access: ChannelAccess,
    buffers: Vec<NodeBuffer>,
    busy_until: Vec<f64>,
    rngs: Vec<RngStream>,
    next_id: u64,
    apps: Vec<SensorApp>,
    controller: Option<ReliabilityController>,
    decisions: Vec<ControllerRow>,
    conn: Option<Connection>,
}

/// Runs one (scenario, seed) to the horizon.
pub fn simulate(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput, ScenarioError> {
    let layout = cfg.build_layout(seed)?;
    let n = layout.topology.len();
    let mut kernel: Kernel<Ev> = Kernel::new();
    let mut world = World {
        cfg,
        topo: layout.topology,
        sensors: layout.sensors,
        subsink: layout.subsink,
        peer: layout.peer,
        access: cfg.radio.channel_access,
        buffers: (0..n)
            .map(|_| NodeBuffer::new(cfg.congestion.buffer_capacity as usize, cfg.congestion.epoch))
            .collect(),
        busy_until: vec![0.0; n],
        rngs: (0..n).map(|i| RngStream::new(seed, i as u64)).collect(),
        next_id: 0,
        apps: Vec::new(),
        controller: None,
        decisions: Vec::new(),
        conn: None,
    };
    world.init(&mut kernel, seed)?;
    kernel.run_until(cfg.sim.horizon, |k, ev| world.handle(k, ev))?;

    let in_flight: u64 = kernel.pending().map(|e| e.payload.carried()).sum();
    let mut trace = kernel.into_trace();
    trace.in_flight = in_flight;
    if !trace.is_time_ordered() {
        return Err(SimError::Invariant("trace out of time order".into()).into());
    }
    let c = trace.conservation();
    if !c.holds() {
        return Err(SimError::Invariant(format!(
            "generated {} != delivered {} + dropped {} + in flight {}",
            c.generated, c.delivered, c.dropped, c.in_flight
        ))
        .into());
    }
    let (connection, transfer) = match world.conn {
        Some(c) => {
            let mut s = c.summary;
            s.unique_received = c.receiver.unique_received();
            s.feedback_sent = c.receiver.feedback_sent();
            s.retransmissions = c.sender.as_ref().map_or(0, |x| x.retransmit_count());
            (c.log, Some(s))
        }
        None => (Vec::new(), None),
    };
    Ok(RunOutput {
        trace,
        decisions: world.decisions,
        connection,
        transfer,
    })
}

impl World<'_> {
    fn init(&mut self, k: &mut Kernel<Ev>, seed: u64) -> Result<(), ScenarioError> {
        let cfg = self.cfg;
        if cfg.field.enabled {
            let controller = ReliabilityController::new(cfg.controller(), cfg.reliability.warmup);
            let f0 = controller.frequency();
            // stratified phases: one sensor per slot of the period
            let n = self.sensors.len();
            let mut rng = RngStream::new(seed, PHASE_STREAM);
            let mut slots: Vec<usize> = (0..n).collect();
            slots.shuffle(&mut rng);
            for &s in &self.sensors {
                let phase = (slots[s.index()] as f64 + rng.gen::<f64>()) / n as f64;
                let next = Some(k.schedule(phase / f0, s, Ev::Generate)?);
                self.apps.push(SensorApp {
                    f: f0,
                    phase,
                    seq: 0,
                    next,
                });
            }
            self.controller = Some(controller);
            k.schedule(
                cfg.reliability.warmup + cfg.interval_len(),
                self.subsink,
                Ev::IntervalClose,
            )?;
        }
        if cfg.transport.enabled {
            self.conn = Some(Connection {
                tcfg: cfg.transport_config(),
                fixed: cfg.transport.mode == SenderMode::Fixed,
                sender: None,
                receiver: Receiver::new(),
                gen_times: Vec::new(),
                next_allowed: 0.0,
                tick: None,
                timeout: None,
                probe_timer: None,
                probe_sent_at: None,
                probes: 0,
                rx_timer: false,
                log: Vec::new(),
                summary: TransferSummary::default(),
            });
            k.schedule(cfg.transport.start_time, self.subsink, Ev::TransportStart)?;
        }
        Ok(())
    }

    fn handle(&mut self, k: &mut Kernel<Ev>, ev: SimEvent<Ev>) -> Result<(), ScenarioError> {
        let at = ev.target;
        match ev.payload {
            Ev::Generate => self.on_generate(k, at),
            Ev::Depart { pkt, next, rest } => self.on_depart(k, at, pkt, next, rest),
            Ev::Arrive(pkt) => self.on_arrive(k, at, pkt),
            Ev::Flood(fl) => self.on_flood(k, at, *fl),
            Ev::IntervalClose => self.on_interval_close(k),
            Ev::TransportStart => self.on_transport_start(k),
            Ev::SenderTick => self.on_sender_tick(k),
            Ev::FeedbackTimeout => self.on_feedback_timeout(k),
            Ev::ProbeTimer => self.on_probe_timer(k),
            Ev::ReceiverFeedback => self.on_receiver_feedback(k),
        }
    }

    fn alloc_ids(&mut self, count: u64) -> u64 {
        let id = self.next_id;
        self.next_id += count;
        id
    }

    fn new_packet(&mut self, class: PacketClass, origin: NodeId, dest: NodeId, now: f64) -> Box<Packet> {
        Box::new(Packet {
            id: self.alloc_ids(1),
            class,
            origin,
            dest,
            gen_time: now,
            injected_at: now,
            seq: 0,
            cn: CnFlag(false),
            path: ProbePacket::new(),
            delay: DelayBreakdown::default(),
            feedback: None,
        })
    }

    fn record(&self, k: &mut Kernel<Ev>, at: NodeId, kind: TraceKind, pkt: &Packet, reason: Option<DropReason>) {
        k.record(at, kind, pkt.id, Some(pkt.class), pkt.seq, pkt.gen_time, reason);
    }

    fn inject(&mut self, k: &mut Kernel<Ev>, at: NodeId, pkt: Box<Packet>) -> Result<(), ScenarioError> {
        self.record(k, at, TraceKind::Generate, &pkt, None);
        self.forward(k, at, pkt)
    }

    // ----- hop-by-hop forwarding -----

    fn forward(&mut self, k: &mut Kernel<Ev>, v: NodeId, mut pkt: Box<Packet>) -> Result<(), ScenarioError> {
        let now = k.now();
        if self.topo.node_fault_at(v, now).is_some() {
            self.record(k, v, TraceKind::Drop, &pkt, Some(DropReason::Fault));
            return Ok(());
        }
        let next = match self.topo.next_hop_at(v, pkt.dest, now) {
            Ok(n) => n,
            Err(_) => {
                let reason = if self.topo.has_route(v, pkt.dest) {
                    DropReason::Fault
                } else {
                    DropReason::NoRoute
                };
                self.record(k, v, TraceKind::Drop, &pkt, Some(reason));
                return Ok(());
            }
        };
        let link = LinkRef::new(v, next);
        let mu = self.topo.link(link)?.service_rate_pps;
        let radio = &self.cfg.radio;
        let buf = &mut self.buffers[v.index()];
        let node_delay = (buf.occupancy() + 1) as f64 / mu;
        match pkt.class {
            PacketClass::Probe | PacketClass::Feedback => {
                // control traffic bypasses the data queue
                if pkt.class == PacketClass::Probe {
                    pkt.path = on_probe_forward(pkt.path, node_delay);
                }
                let d = self.topo.sample_channel_delays(
                    link,
                    radio.control_bits,
                    0,
                    &self.access,
                    &mut self.rngs[v.index()],
                )?;
                pkt.delay.accumulate(&d);
                self.record(k, v, TraceKind::Send, &pkt, None);
                self.transmit(k, v, next, pkt, d.after_buffer())
            }
            PacketClass::SensorData | PacketClass::TransportData => {
                buf.advance_epoch(now);
                pkt.cn = mark_packet(pkt.cn, buf.congestion_flag());
                if pkt.class == PacketClass::TransportData {
                    pkt.path = on_probe_forward(pkt.path, node_delay);
                }
                if buf.on_enqueue() == EnqueueResult::Dropped {
                    self.record(k, v, TraceKind::Drop, &pkt, Some(DropReason::Overflow));
                    return Ok(());
                }
                debug_assert!(buf.occupancy() <= buf.capacity());
                let mut d = self.topo.sample_channel_delays(
                    link,
                    radio.packet_bits,
                    0,
                    &self.access,
                    &mut self.rngs[v.index()],
                )?;
                // FIFO server draining at the link service rate
                let depart = self.busy_until[v.index()].max(now) + 1.0 / mu;
                self.busy_until[v.index()] = depart;
                d.b_del = depart - now;
                pkt.delay.accumulate(&d);
                let rest = d.after_buffer();
                k.schedule(depart, v, Ev::Depart { pkt, next, rest })?;
                Ok(())
            }
            PacketClass::Broadcast => Err(SimError::Invariant("broadcast on unicast path".into()).into()),
        }
    }

    fn on_depart(
        &mut self,
        k: &mut Kernel<Ev>,
        v: NodeId,
        pkt: Box<Packet>,
        next: NodeId,
        rest: f64,
    ) -> Result<(), ScenarioError> {
        self.buffers[v.index()].on_dequeue();
        let now = k.now();
        if self.topo.node_fault_at(v, now).is_some() || self.topo.link_faulted_at(LinkRef::new(v, next), now) {
            self.record(k, v, TraceKind::Drop, &pkt, Some(DropReason::Fault));
            return Ok(());
        }
        self.record(k, v, TraceKind::Send, &pkt, None);
        self.transmit(k, v, next, pkt, rest)
    }

    /// Puts a packet on the air; the loss draw happens at the sender.
    fn transmit(
        &mut self,
        k: &mut Kernel<Ev>,
        v: NodeId,
        next: NodeId,
        pkt: Box<Packet>,
        airtime: f64,
    ) -> Result<(), ScenarioError> {
        let loss = self.topo.link(LinkRef::new(v, next))?.loss_prob;
        if loss > 0.0 && self.rngs[v.index()].gen::<f64>() < loss {
            self.record(k, v, TraceKind::Drop, &pkt, Some(DropReason::Loss));
            return Ok(());
        }
        k.schedule(k.now() + airtime, next, Ev::Arrive(pkt))?;
        Ok(())
    }

    fn on_arrive(&mut self, k: &mut Kernel<Ev>, w: NodeId, pkt: Box<Packet>) -> Result<(), ScenarioError> {
        let now = k.now();
        if self.topo.node_fault_at(w, now) == Some(FaultMode::Crash) {
            self.record(k, w, TraceKind::Drop, &pkt, Some(DropReason::Fault));
            return Ok(());
        }
        self.record(k, w, TraceKind::Receive, &pkt, None);
        if w != pkt.dest {
            return self.forward(k, w, pkt);
        }
        let expected = pkt.injected_at + pkt.delay.total();
        if (now - expected).abs() > CAUSALITY_TOL * now.max(1.0) || now <= pkt.injected_at {
            return Err(SimError::Invariant(format!(
                "packet {} delivered at {now} but delays account for {expected}",
                pkt.id
            ))
            .into());
        }
        self.record(k, w, TraceKind::Deliver, &pkt, None);
        match pkt.class {
            PacketClass::SensorData => {
                if let Some(c) = self.controller.as_mut() {
                    if now >= self.cfg.reliability.warmup {
                        c.record_arrival(pkt.gen_time, pkt.cn.is_set(), now, &pkt.delay);
                    }
                }
                Ok(())
            }
            PacketClass::Probe => self.on_probe_at_receiver(k, &pkt),
            PacketClass::TransportData => self.on_data_at_receiver(k, &pkt),
            PacketClass::Feedback => self.on_feedback_at_sender(k, &pkt),
            PacketClass::Broadcast => Err(SimError::Invariant("broadcast on unicast path".into()).into()),
        }
    }

    // ----- sensors and frequency control -----

    fn on_generate(&mut self, k: &mut Kernel<Ev>, s: NodeId) -> Result<(), ScenarioError> {
        let now = k.now();
        let app = &mut self.apps[s.index()];
        app.next = None;
        if self.topo.node_fault_at(s, now) == Some(FaultMode::Crash) {
            return Ok(());
        }
        app.seq += 1;
        let seq = app.seq;
        app.next = Some(k.schedule(now + 1.0 / app.f, s, Ev::Generate)?);
        let mut pkt = self.new_packet(PacketClass::SensorData, s, self.subsink, now);
        pkt.seq = seq;
        self.inject(k, s, pkt)
    }

    /// Re-anchors a sensor's schedule on the broadcast issue time so that
    /// relative phases survive a frequency change.
    fn apply_frequency(&mut self, k: &mut Kernel<Ev>, s: NodeId, f: f64, issued_at: f64) -> Result<(), ScenarioError> {
        let now = k.now();
        let app = &mut self.apps[s.index()];
        if app.f == f || app.next.is_none() {
            return Ok(());
        }
        if let Some(h) = app.next.take() {
            k.cancel(h);
        }
        app.f = f;
        let period = 1.0 / f;
        let slots = ((now - issued_at) / period - app.phase).ceil().max(0.0);
        let next = (issued_at + (slots + app.phase) * period).max(now);
        app.next = Some(k.schedule(next, s, Ev::Generate)?);
        Ok(())
    }

    fn on_interval_close(&mut self, k: &mut Kernel<Ev>) -> Result<(), ScenarioError> {
        let now = k.now();
        let controller = self.controller.as_mut().expect("interval close without controller");
        let (row, bcast) = controller.close_interval(now)?;
        self.decisions.push(row);
        k.schedule(now + self.cfg.interval_len(), self.subsink, Ev::IntervalClose)?;

        let msg = self.alloc_ids(1 + self.sensors.len() as u64);
        let flood = Flood {
            msg,
            copy_base: msg + 1,
            interval: bcast.interval,
            frequency: bcast.frequency,
            issued_at: now,
            elapsed: 0.0,
            targets: self.sensors.clone(),
        };
        for &s in &flood.targets {
            k.record(
                self.subsink,
                TraceKind::Generate,
                flood.copy_base + s.0 as u64,
                Some(PacketClass::Broadcast),
                flood.interval,
                now,
                None,
            );
        }
        self.flood_from(k, self.subsink, flood)
    }

    fn record_copy(&self, k: &mut Kernel<Ev>, at: NodeId, fl: &Flood, target: NodeId, kind: TraceKind, reason: Option<DropReason>) {
        k.record(
            at,
            kind,
            fl.copy_base + target.0 as u64,
            Some(PacketClass::Broadcast),
            fl.interval,
            fl.issued_at,
            reason,
        );
    }

    /// Neighbour of `v` through which `target` routes toward the sub-sink,
    /// under the faults active now.
    fn child_toward(&self, v: NodeId, target: NodeId, now: f64) -> Option<NodeId> {
        let mut u = target;
        for _ in 0..self.topo.len() {
            let up = self.topo.next_hop_at(u, self.subsink, now).ok()?;
            if up == v {
                return Some(u);
            }
            if up == self.subsink {
                return None;
            }
            u = up;
        }
        None
    }

    fn flood_from(&mut self, k: &mut Kernel<Ev>, v: NodeId, fl: Flood) -> Result<(), ScenarioError> {
        let now = k.now();
        let mut groups: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for &t in &fl.targets {
            match self.child_toward(v, t, now) {
                Some(c) => groups.entry(c).or_default().push(t),
                None => self.record_copy(k, v, &fl, t, TraceKind::Drop, Some(DropReason::Fault)),
            }
        }
        if groups.is_empty() {
            return Ok(());
        }
        k.record(v, TraceKind::Send, fl.msg, Some(PacketClass::Broadcast), fl.interval, fl.issued_at, None);
        // one transmission, one channel-access wait, per tree node
        let ca = self.access.sample(&mut self.rngs[v.index()]);
        let radio = &self.cfg.radio;
        for (child, targets) in groups {
            let params = *self.topo.link(LinkRef::new(v, child))?;
            if params.loss_prob > 0.0 && self.rngs[v.index()].gen::<f64>() < params.loss_prob {
                for &t in &targets {
                    self.record_copy(k, v, &fl, t, TraceKind::Drop, Some(DropReason::Loss));
                }
                continue;
            }
            let hop = ca + radio.control_bits / params.bit_rate_bps + params.propagation_delay();
            let next = Flood {
                elapsed: fl.elapsed + hop,
                targets,
                ..fl.clone()
            };
            k.schedule(now + hop, child, Ev::Flood(Box::new(next)))?;
        }
        Ok(())
    }

    fn on_flood(&mut self, k: &mut Kernel<Ev>, w: NodeId, mut fl: Flood) -> Result<(), ScenarioError> {
        let now = k.now();
        let fault = self.topo.node_fault_at(w, now);
        if fault == Some(FaultMode::Crash) {
            for &t in &fl.targets {
                self.record_copy(k, w, &fl, t, TraceKind::Drop, Some(DropReason::Fault));
            }
            return Ok(());
        }
        k.record(w, TraceKind::Receive, fl.msg, Some(PacketClass::Broadcast), fl.interval, fl.issued_at, None);
        let expected = fl.issued_at + fl.elapsed;
        if (now - expected).abs() > CAUSALITY_TOL * now.max(1.0) {
            return Err(SimError::Invariant(format!("broadcast at {now} expected at {expected}")).into());
        }
        if let Some(pos) = fl.targets.iter().position(|&t| t == w) {
            fl.targets.remove(pos);
            self.record_copy(k, w, &fl, w, TraceKind::Deliver, None);
            self.apply_frequency(k, w, fl.frequency, fl.issued_at)?;
        }
        if fault == Some(FaultMode::DropAll) {
            for &t in &fl.targets {
                self.record_copy(k, w, &fl, t, TraceKind::Drop, Some(DropReason::Fault));
            }
            return Ok(());
        }
        if fl.targets.is_empty() {
            return Ok(());
        }
        self.flood_from(k, w, fl)
    }

    // ----- sub-sink to sub-sink transport -----

    fn conn(&mut self) -> &mut Connection {
        self.conn.as_mut().expect("transport event without a connection")
    }

    fn peer(&self) -> NodeId {
        self.peer.expect("transport enabled without a peer")
    }

    fn log(&mut self, now: f64, r_f: Option<f64>) {
        let c = self.conn();
        if let Some(s) = &c.sender {
            let row = s.log_row(now, r_f);
            c.log.push(row);
        }
    }

    fn on_transport_start(&mut self, k: &mut Kernel<Ev>) -> Result<(), ScenarioError> {
        let now = k.now();
        let t = &self.cfg.transport;
        let (goal, deadline, rate) = (t.goal_packets, now + t.deadline, t.fixed_rate_pps);
        let route = self.topo.next_hop_at(self.subsink, self.peer(), now).is_ok();
        let c = self.conn();
        let tcfg = c.tcfg;
        if c.fixed {
            c.sender = Some(Sender::new(TransportState::fixed(rate, &tcfg), tcfg, goal, deadline));
            self.log(now, None);
            self.conn().tick = Some(k.schedule(now, self.subsink, Ev::SenderTick)?);
            return Ok(());
        }
        let g = DeliveryGoal {
            b_remaining: goal,
            deadline,
        };
        match TransportState::start_connection(&g, &tcfg, now, route) {
            Ok(state) => {
                c.sender = Some(Sender::new(state, tcfg, goal, deadline));
                self.log(now, None);
                self.send_probe(k)?;
                self.conn().probe_timer = Some(k.schedule(now + tcfg.t_p, self.subsink, Ev::ProbeTimer)?);
            }
            Err(e) => c.summary.start_error = Some(e),
        }
        Ok(())
    }

    fn send_probe(&mut self, k: &mut Kernel<Ev>) -> Result<(), ScenarioError> {
        let now = k.now();
        let (a, b) = (self.subsink, self.peer());
        let c = self.conn();
        c.probes += 1;
        c.probe_sent_at = Some(now);
        let seq = c.probes;
        let mut pkt = self.new_packet(PacketClass::Probe, a, b, now);
        pkt.seq = seq;
        self.inject(k, a, pkt)
    }

    fn on_probe_timer(&mut self, k: &mut Kernel<Ev>) -> Result<(), ScenarioError> {
        let now = k.now();
        let c = self.conn();
        c.probe_timer = None;
        let t_p = c.tcfg.t_p;
        let probing = c
            .sender
            .as_ref()
            .is_some_and(|s| matches!(s.state.phase, Phase::StartUp | Phase::Probe));
        if probing {
            self.send_probe(k)?;
            self.conn().probe_timer = Some(k.schedule(now + t_p, self.subsink, Ev::ProbeTimer)?);
        }
        Ok(())
    }

    fn send_feedback(&mut self, k: &mut Kernel<Ev>, fb: RateFeedback) -> Result<(), ScenarioError> {
        let now = k.now();
        let (a, b) = (self.subsink, self.peer());
        let sack = self.conn().receiver.sack();
        let mut pkt = self.new_packet(PacketClass::Feedback, b, a, now);
        pkt.seq = sack.cumulative_ack;
        pkt.feedback = Some((fb, sack));
        self.inject(k, b, pkt)
    }

    fn on_probe_at_receiver(&mut self, k: &mut Kernel<Ev>, pkt: &Packet) -> Result<(), ScenarioError> {
        let now = k.now();
        let b = self.peer();
        let c = self.conn();
        let answer = c.receiver.on_probe(&pkt.path, now);
        let start_timer = !c.rx_timer && !c.receiver.is_complete();
        let t_fdbk = c.tcfg.t_fdbk;
        if start_timer {
            c.rx_timer = true;
            k.schedule(now + t_fdbk, b, Ev::ReceiverFeedback)?;
        }
        match answer {
            Ok(fb) => self.send_feedback(k, fb),
            Err(TransportError::DegenerateProbe) => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    fn on_data_at_receiver(&mut self, k: &mut Kernel<Ev>, pkt: &Packet) -> Result<(), ScenarioError> {
        let now = k.now();
        let total = self.cfg.transport.goal_packets;
        let c = self.conn();
        let was_complete = c.receiver.is_complete();
        c.receiver.on_data(pkt.seq, total, &pkt.path);
        if !c.fixed && !was_complete && c.receiver.is_complete() {
            // final acknowledgment without waiting for the timer
            if let Some(fb) = c.receiver.periodic_feedback(now) {
                return self.send_feedback(k, fb);
            }
        }
        Ok(())
    }

    fn on_receiver_feedback(&mut self, k: &mut Kernel<Ev>) -> Result<(), ScenarioError> {
        let now = k.now();
        let b = self.peer();
        let c = self.conn();
        if c.receiver.is_complete() {
            c.rx_timer = false;
            return Ok(());
        }
        let fb = c.receiver.periodic_feedback(now);
        let t_fdbk = c.tcfg.t_fdbk;
        k.schedule(now + t_fdbk, b, Ev::ReceiverFeedback)?;
        match fb {
            Some(fb) => self.send_feedback(k, fb),
            None => Ok(()),
        }
    }

    fn on_feedback_at_sender(&mut self, k: &mut Kernel<Ev>, pkt: &Packet) -> Result<(), ScenarioError> {
        let now = k.now();
        let a = self.subsink;
        let Some((fb, sack)) = pkt.feedback.clone() else {
            return Err(SimError::Invariant("feedback packet without payload".into()).into());
        };
        let c = self.conn();
        if c.fixed || c.summary.completed_at.is_some() {
            return Ok(());
        }
        let Some(sender) = c.sender.as_mut() else {
            return Ok(());
        };
        if matches!(sender.state.phase, Phase::StartUp | Phase::Probe) {
            if let Some(t) = c.probe_sent_at.take() {
                sender.observe_rtt(now - t);
            }
        }
        let applied = sender.state.apply_rate_feedback(&fb, c.tcfg.hold_band);
        // one round trip of grace so path jitter on the next periodic
        // feedback is not read as a missed period
        let grace = sender.rtt();
        match applied {
            Ok(()) => {
                c.summary.feedback_applied += 1;
                c.summary.first_feedback_at.get_or_insert(now);
                if let Some(h) = c.timeout.take() {
                    k.cancel(h);
                }
                c.timeout = Some(k.schedule(now + c.tcfg.t_fdbk + grace, a, Ev::FeedbackTimeout)?);
            }
            Err(TransportError::StaleFeedback { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        sender.on_sack(&sack, now);
        let done = sender.goal().b_remaining == 0;
        if applied.is_ok() {
            self.log(now, Some(fb.r_f));
        }
        if done {
            self.complete(k);
            return Ok(());
        }
        self.ensure_ticking(k)
    }

    fn ensure_ticking(&mut self, k: &mut Kernel<Ev>) -> Result<(), ScenarioError> {
        let now = k.now();
        let a = self.subsink;
        let c = self.conn();
        let sending = c.sender.as_ref().is_some_and(|s| s.state.phase.sends_data());
        if c.tick.is_none() && sending {
            c.tick = Some(k.schedule(c.next_allowed.max(now), a, Ev::SenderTick)?);
        }
        Ok(())
    }

    fn complete(&mut self, k: &mut Kernel<Ev>) {
        let now = k.now();
        let c = self.conn();
        c.summary.completed_at = Some(now);
        for h in [c.tick.take(), c.timeout.take(), c.probe_timer.take()].into_iter().flatten() {
            k.cancel(h);
        }
        self.log(now, None);
    }

    fn on_sender_tick(&mut self, k: &mut Kernel<Ev>) -> Result<(), ScenarioError> {
        let now = k.now();
        let (a, b) = (self.subsink, self.peer());
        let c = self.conn();
        c.tick = None;
        let sender = c.sender.as_mut().expect("tick without sender");
        match sender.tick_send(now) {
            Ok(SendAction::Emit { seq, next_at, .. }) => {
                if seq as usize > c.gen_times.len() {
                    c.gen_times.push(now);
                }
                let gen_time = c.gen_times[seq as usize - 1];
                c.next_allowed = next_at;
                c.tick = Some(k.schedule(next_at, a, Ev::SenderTick)?);
                let mut pkt = self.new_packet(PacketClass::TransportData, a, b, now);
                pkt.seq = seq;
                pkt.gen_time = gen_time;
                self.inject(k, a, pkt)
            }
            Ok(SendAction::Complete) => {
                self.complete(k);
                Ok(())
            }
            Ok(SendAction::Idle | SendAction::NotSending) => Ok(()),
            Err(TransportError::DeadlineExpired { .. }) => {
                sender.continue_after_deadline();
                c.tick = Some(k.schedule(now, a, Ev::SenderTick)?);
                self.log(now, None);
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    fn on_feedback_timeout(&mut self, k: &mut Kernel<Ev>) -> Result<(), ScenarioError> {
        let now = k.now();
        let a = self.subsink;
        let c = self.conn();
        c.timeout = None;
        let (factor, t_fdbk, t_p) = (c.tcfg.decrease_factor, c.tcfg.t_fdbk, c.tcfg.t_p);
        let Some(sender) = c.sender.as_mut() else {
            return Ok(());
        };
        let action = sender.state.on_feedback_timeout(factor);
        match action {
            TimeoutAction::Decreased => {
                c.timeout = Some(k.schedule(now + t_fdbk, a, Ev::FeedbackTimeout)?);
            }
            TimeoutAction::SendProbe => {
                if let Some(h) = c.probe_timer.take() {
                    k.cancel(h);
                }
                c.probe_timer = Some(k.schedule(now + t_p, a, Ev::ProbeTimer)?);
                self.send_probe(k)?;
            }
            TimeoutAction::Ignored => return Ok(()),
        }
        self.log(now, None);
        Ok(())
    }
}
