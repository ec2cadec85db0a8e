mod common;

use std::fs;
use std::process::Command;

use rrrt::scenario::{
    parse_value, replay, run, sweep, RunArtifacts, ScenarioConfig, ScenarioError, SweepSpec,
};

fn quick_field() -> ScenarioConfig {
    let mut cfg = common::paper_default();
    cfg.sim.horizon = 8.0;
    cfg
}

fn rrrt_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rrrt"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn bundled_scenario_round_trips_through_toml() {
    let cfg = common::paper_default();
    cfg.validate().unwrap();
    let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
}

#[test]
fn sweep_has_one_row_per_value() {
    let spec = SweepSpec {
        parameter: "reliability.f_init".into(),
        values: ["1", "2", "4", "8"].iter().map(|v| parse_value(v)).collect(),
        repetitions: 10,
    };
    let rows = sweep(&quick_field(), &spec).unwrap();
    assert_eq!(rows.len(), 4);
    let values: Vec<&str> = rows.iter().map(|r| r.value.as_str()).collect();
    assert_eq!(values, ["1", "2", "4", "8"]);
    assert!(rows.iter().all(|r| r.runs == 10 && r.total_energy_mean > 0.0));
}

#[test]
fn single_repetition_has_zero_spread() {
    let spec = SweepSpec {
        parameter: "reliability.f_init".into(),
        values: vec![parse_value("2")],
        repetitions: 1,
    };
    let rows = sweep(&quick_field(), &spec).unwrap();
    assert_eq!(rows[0].total_energy_std, 0.0);
    assert_eq!(rows[0].aggregate_throughput_std, 0.0);
}

#[test]
fn sweep_rejects_unknown_parameter() {
    let spec = SweepSpec {
        parameter: "reliability.nope".into(),
        values: vec![parse_value("1")],
        repetitions: 1,
    };
    assert!(matches!(
        sweep(&quick_field(), &spec),
        Err(ScenarioError::UnknownParameter(p)) if p == "reliability.nope"
    ));
}

#[test]
fn replay_reproduces_the_report() {
    let mut cfg = quick_field();
    cfg.transport.enabled = true;
    cfg.transport.loss_prob = 0.1;
    let art = run(&cfg, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.rrrt");
    let mut bytes = Vec::new();
    art.write_trace_file(&mut bytes).unwrap();
    fs::write(&path, &bytes).unwrap();
    assert_eq!(replay(&path).unwrap(), art.report());
    let back = RunArtifacts::read_trace_file(&bytes).unwrap();
    assert_eq!(back, art);
}

#[test]
fn truncated_trace_is_corrupt_at_its_end() {
    let art = run(&quick_field(), 1).unwrap();
    let mut bytes = Vec::new();
    art.write_trace_file(&mut bytes).unwrap();
    let cut = &bytes[..bytes.len() / 2];
    match RunArtifacts::read_trace_file(cut) {
        Err(ScenarioError::Corrupt { offset, .. }) => assert!(offset <= cut.len() as u64),
        other => panic!("expected Corrupt, got {other:?}"),
    }
}

#[test]
fn empty_trace_gives_zero_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.rrrt");
    fs::write(&path, b"").unwrap();
    let report = replay(&path).unwrap();
    assert_eq!(report.aggregate_throughput, 0);
    assert_eq!(report.total_energy, 0.0);
    assert_eq!(report.convergence_time, None);
    assert_eq!(report.average_packet_delay, None);
    assert!(report.per_interval.is_empty());
}

#[test]
fn missing_trace_is_an_io_error() {
    assert!(matches!(
        replay(std::path::Path::new("/nonexistent/run.rrrt")),
        Err(ScenarioError::Io { .. })
    ));
}

#[test]
fn cli_run_writes_artifacts_and_replay_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    fs::write(&scenario, quick_field().to_toml()).unwrap();
    let out = dir.path().join("out");
    let o = rrrt_cli(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.rrrt", "intervals.csv", "connection.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["scenario_hash"], quick_field().hash());
    assert!(summary["version"].is_string());

    let o = rrrt_cli(&["replay", out.join("trace.rrrt").to_str().unwrap()]);
    assert!(o.status.success());
    let replayed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(replayed, summary);

    let intervals = fs::read_to_string(out.join("intervals.csv")).unwrap();
    assert!(intervals.starts_with("# rrrt "));
}

#[test]
fn cli_exit_codes_follow_error_category() {
    let dir = tempfile::tempdir().unwrap();
    let good = common::scenario_path("paper_default.toml");
    assert_eq!(rrrt_cli(&["validate", "--scenario", good.to_str().unwrap()]).status.code(), Some(0));

    let mut bad = quick_field();
    bad.reliability.beta = 0.0;
    let bad_path = dir.path().join("bad.toml");
    fs::write(&bad_path, bad.to_toml()).unwrap();
    let o = rrrt_cli(&["validate", "--scenario", bad_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reliability.beta"));

    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "[sim]\nhorizon = 5.0\nbogus = 1\n").unwrap();
    assert_eq!(rrrt_cli(&["validate", "--scenario", unknown.to_str().unwrap()]).status.code(), Some(2));

    let o = rrrt_cli(&["validate", "--scenario", "/nonexistent/s.toml"]);
    assert_eq!(o.status.code(), Some(3));

    let o = rrrt_cli(&[
        "sweep",
        "--scenario",
        good.to_str().unwrap(),
        "--param",
        "radio.nope",
        "--values",
        "1,2",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let art = run(&quick_field(), 1).unwrap();
    let mut bytes = Vec::new();
    art.write_trace_file(&mut bytes).unwrap();
    let cut = dir.path().join("cut.rrrt");
    fs::write(&cut, &bytes[..bytes.len() - 40]).unwrap();
    assert_eq!(rrrt_cli(&["replay", cut.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn cli_sweep_writes_csv_with_preamble() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    fs::write(&scenario, quick_field().to_toml()).unwrap();
    let out = dir.path().join("sweep.csv");
    let o = rrrt_cli(&[
        "sweep",
        "--scenario",
        scenario.to_str().unwrap(),
        "--param",
        "reliability.beta",
        "--values",
        "0.05,0.2",
        "--reps",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# rrrt "));
    assert!(lines[1].starts_with("parameter,value,runs"));
    assert_eq!(lines.len(), 4);
}
