#![allow(dead_code)]

use std::path::PathBuf;

use rrrt::scenario::ScenarioConfig;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

/// 81 sensors in a 45 m event radius, 1 s delay bound, beta 0.05.
pub fn paper_default() -> ScenarioConfig {
    ScenarioConfig::load(&scenario_path("paper_default.toml")).expect("bundled scenario loads")
}

/// Default field with a 10 m radio range. The extra hops let a high initial
/// frequency congest the relays before the first decision, so all four
/// non-adequate start conditions are reachable on one topology. At the
/// operating point (about 2.5 Hz) no buffer is near capacity.
pub fn linear_field(f_init: f64, warmup: f64, intervals: u32) -> ScenarioConfig {
    let mut cfg = paper_default();
    cfg.radio.range_m = 10.0;
    cfg.reliability.f_init = f_init;
    cfg.reliability.warmup = warmup;
    cfg.sim.horizon = warmup + intervals as f64 * cfg.interval_len();
    cfg
}

/// Five-hop sub-sink to sub-sink chain with a 50 pkt/s bottleneck and
/// i.i.d. loss on the last hop; no sensor field.
pub fn chain(loss_prob: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.field.enabled = false;
    cfg.transport.enabled = true;
    cfg.transport.loss_prob = loss_prob;
    cfg.sim.horizon = 400.0;
    cfg
}
