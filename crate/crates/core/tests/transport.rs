mod common;

use rrrt::metrics::{aggregate_throughput, total_energy};
use rrrt::scenario::{run, simulate, FaultSpec, SenderMode};
use rrrt::sim::{ChannelAccess, DropReason, FaultMode, NodeId, PacketClass, TraceKind};
use rrrt::transport::{feedback_from_probe, on_probe_forward, Phase, ProbePacket};

/// Chain nodes when the field is disabled: sub-sink 0, relays 1..=4, peer 5.
const PEER: u32 = 5;

#[test]
fn periodic_feedback_count_matches_period() {
    let mut cfg = common::chain(0.0);
    cfg.transport.t_fdbk = Some(0.5);
    cfg.transport.goal_packets = 100_000;
    cfg.transport.deadline = 10_000.0;
    cfg.sim.horizon = 20.0;
    assert!(cfg.chain_rtt() < 0.5);
    let art = run(&cfg, 1).unwrap();
    let in_window = art
        .trace
        .events()
        .iter()
        .filter(|e| {
            e.kind == TraceKind::Generate
                && e.class == Some(PacketClass::Feedback)
                && e.node == NodeId(PEER)
                && (5.0..15.0).contains(&e.time)
        })
        .count();
    assert_eq!(in_window, 20);
}

#[test]
fn first_feedback_within_one_period_of_the_round_trip() {
    for seed in 1..=5 {
        let mut cfg = common::chain(0.0);
        cfg.radio.channel_access = ChannelAccess::Fixed { delay: 0.002 };
        // probe and answer are control packets that skip the data queues
        let per_hop = 0.002
            + cfg.radio.control_bits / cfg.radio.bit_rate_bps
            + cfg.transport.hop_distance_m / rrrt::sim::SIGNAL_SPEED;
        let rtt = 2.0 * cfg.transport.hops as f64 * per_hop;
        let t_fdbk = cfg.transport_config().t_fdbk;
        let out = simulate(&cfg, seed).unwrap();
        let first = out.transfer.unwrap().first_feedback_at.unwrap() - cfg.transport.start_time;
        assert!(first >= rtt - 1e-12 && first <= rtt + t_fdbk, "seed {seed}: {first} vs rtt {rtt}");
    }
}

#[test]
fn feedback_blackout_leads_to_probe_at_quarter_rate() {
    let mut cfg = common::chain(0.0);
    cfg.sim.horizon = 30.0;
    // cut the return path only: data keeps flowing, feedback stops
    cfg.faults = vec![FaultSpec {
        node: None,
        link: Some([4, 3]),
        at: 8.0,
        mode: FaultMode::Crash,
    }];
    let art = run(&cfg, 1).unwrap();
    let rows = &art.connection;
    let first_miss = rows
        .iter()
        .position(|r| r.time > 8.0 && r.missed_feedback == 1)
        .expect("a missed period after the cut");
    let r_c0 = rows[first_miss - 1].r_c;
    let probe = rows[first_miss..]
        .iter()
        .find(|r| r.phase == Phase::Probe)
        .expect("probing after two missed periods");
    assert_eq!(probe.missed_feedback, 2);
    let want = (r_c0 / 4.0).max(probe.r_min);
    assert!((probe.r_c - want).abs() < 1e-9 * want, "{} vs {want}", probe.r_c);
    let cfg_t = cfg.transport_config();
    let silent = probe.time - rows[first_miss - 1].time;
    assert!(silent >= 2.0 * cfg_t.t_fdbk && silent <= 2.0 * cfg_t.t_fdbk + 2.0 * cfg_t.rtt_estimate);
}

/// FIFO server fed faster than it can serve; returns departures per second
/// over the busy period.
fn brute_force_bottleneck(arrival_rate: f64, service_time: f64, packets: u32) -> f64 {
    let mut busy_until = 0.0f64;
    let mut first = None;
    for i in 0..packets {
        let arrival = i as f64 / arrival_rate;
        busy_until = busy_until.max(arrival) + service_time;
        first.get_or_insert(busy_until);
    }
    (packets - 1) as f64 / (busy_until - first.unwrap())
}

#[test]
fn sustained_rate_equals_inverse_bottleneck_delay() {
    let oracle = brute_force_bottleneck(200.0, 0.01, 2000);
    assert!((oracle - 100.0).abs() < 1e-6);
    let probe = [0.004, 0.01, 0.004]
        .iter()
        .fold(ProbePacket::new(), |p, &d| on_probe_forward(p, d));
    assert_eq!(feedback_from_probe(&probe, 0.0).unwrap().r_f, 100.0);

    // the simulated chain sustains the same rate through its slow hop
    let mut cfg = common::chain(0.0);
    cfg.transport.mode = SenderMode::Fixed;
    cfg.transport.sack = false;
    cfg.transport.fixed_rate_pps = 200.0;
    cfg.transport.link_rate_pps = 250.0;
    cfg.transport.bottleneck_rate_pps = 100.0;
    cfg.congestion.buffer_capacity = 10_000;
    cfg.transport.goal_packets = 2000;
    let art = run(&cfg, 1).unwrap();
    let times: Vec<f64> = art
        .trace
        .events()
        .iter()
        .filter(|e| e.kind == TraceKind::Deliver && e.class == Some(PacketClass::TransportData))
        .map(|e| e.time)
        .collect();
    assert_eq!(times.len(), 2000);
    let (a, b) = (times[100], times[1900]);
    let rate = 1800.0 / (b - a);
    assert!((rate - oracle).abs() / oracle < 0.02, "{rate}");
}

#[test]
fn loss_costs_energy_for_the_same_workload() {
    let clean = run(&common::chain(0.0), 1).unwrap();
    let lossy = run(&common::chain(0.2), 1).unwrap();
    assert_eq!(aggregate_throughput(&clean.trace), 1000);
    assert_eq!(aggregate_throughput(&lossy.trace), 1000);
    let e = |a: &rrrt::scenario::RunArtifacts| total_energy(&a.trace, a.e_tx, a.e_rx).total;
    assert!(e(&lossy) > e(&clean));
}

#[test]
fn lossless_chain_delivers_every_generated_packet() {
    let art = run(&common::chain(0.0), 2).unwrap();
    let generated: std::collections::BTreeSet<u64> = art
        .trace
        .events()
        .iter()
        .filter(|e| e.kind == TraceKind::Generate && e.class == Some(PacketClass::TransportData))
        .map(|e| e.seq)
        .collect();
    assert_eq!(generated.len() as u64, aggregate_throughput(&art.trace));
    assert_eq!(generated.len(), 1000);
}

#[test]
fn fixed_sender_overflows_the_bottleneck() {
    let mut cfg = common::chain(0.0);
    cfg.transport.mode = SenderMode::Fixed;
    cfg.transport.sack = false;
    cfg.transport.fixed_rate_pps = 100.0;
    let art = run(&cfg, 1).unwrap();
    let overflow = art
        .trace
        .events()
        .iter()
        .filter(|e| e.reason == Some(DropReason::Overflow))
        .count();
    assert!(overflow > 0);
    assert!(aggregate_throughput(&art.trace) < 1000);
}

#[test]
fn light_load_never_flags_congestion() {
    let mut cfg = common::paper_default();
    cfg.radio.channel_access = ChannelAccess::Fixed { delay: 0.002 };
    cfg.reliability.f_init = 0.5;
    cfg.reliability.f_cap = 0.5;
    cfg.sim.horizon = 30.0;
    let art = run(&cfg, 1).unwrap();
    assert!(art.decisions.iter().all(|r| !r.cn));
    assert!(art.trace.events().iter().all(|e| e.reason != Some(DropReason::Overflow)));
}
