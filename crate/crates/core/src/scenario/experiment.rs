use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::metrics::MetricsReport;

use super::artifacts::{RunArtifacts, ARTIFACT_VERSION};
use super::config::ScenarioConfig;
use super::world::simulate;
use super::ScenarioError;

/// Runs one seed and keeps everything needed for replay.
pub fn run(cfg: &ScenarioConfig, seed: u64) -> Result<RunArtifacts, ScenarioError> {
    cfg.validate()?;
    let out = simulate(cfg, seed)?;
    Ok(RunArtifacts {
        scenario_hash: cfg.hash(),
        seed,
        e_tx: cfg.energy.e_tx,
        e_rx: cfg.energy.e_rx,
        beta: cfg.reliability.beta,
        trace: out.trace,
        decisions: out.decisions,
        connection: out.connection,
    })
}

pub fn run_experiment(cfg: &ScenarioConfig, seed: u64) -> Result<MetricsReport, ScenarioError> {
    Ok(run(cfg, seed)?.report())
}

/// Recomputes the report of a prior run from its trace file.
pub fn replay(path: &Path) -> Result<MetricsReport, ScenarioError> {
    let bytes = std::fs::read(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(RunArtifacts::read_trace_file(&bytes)?.report())
}

/// Config with every optional key present, so sweep paths can be checked
/// against the full set of settable parameters.
fn schema() -> toml::Value {
    let mut cfg = ScenarioConfig::default();
    cfg.reliability.interval_len = Some(1.0);
    cfg.field.subsink_position = Some([0.0, 0.0]);
    cfg.transport.t_fdbk = Some(1.0);
    cfg.transport.t_p = Some(1.0);
    cfg.transport.rtt_estimate = Some(1.0);
    toml::Value::try_from(&cfg).expect("scenario config always serializes")
}

/// Returns a copy of `cfg` with the dotted `path` set to `value`.
pub fn set_parameter(
    cfg: &ScenarioConfig,
    path: &str,
    value: toml::Value,
) -> Result<ScenarioConfig, ScenarioError> {
    let unknown = || ScenarioError::UnknownParameter(path.to_string());
    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys.split_last().ok_or_else(unknown)?;

    let mut probe = &schema();
    for k in &keys {
        probe = probe.get(k).ok_or_else(unknown)?;
    }
    if probe.is_table() {
        return Err(unknown());
    }

    let mut doc = toml::Value::try_from(cfg).expect("scenario config always serializes");
    let mut table = doc.as_table_mut().expect("config serializes to a table");
    for k in parents {
        table = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(unknown)?;
    }
    table.insert(last.to_string(), value);
    doc.try_into()
        .map_err(|e: toml::de::Error| ScenarioError::Parse(format!("{path}: {e}")))
}

/// Interprets a command-line value as a TOML literal, falling back to a
/// plain string.
pub fn parse_value(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<toml::Value>,
    pub repetitions: u32,
}

/// Mean and standard deviation of each metric over the repetitions of one
/// parameter value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: String,
    pub runs: u32,
    /// Runs whose controller reached sustained adequate reliability.
    pub converged_runs: u32,
    pub convergence_time_mean: Option<f64>,
    pub convergence_time_std: Option<f64>,
    pub total_energy_mean: f64,
    pub total_energy_std: f64,
    pub aggregate_throughput_mean: f64,
    pub aggregate_throughput_std: f64,
    pub average_packet_delay_mean: Option<f64>,
    pub average_packet_delay_std: Option<f64>,
}

/// Sample mean and standard deviation; the deviation of one sample is 0.
fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

/// Runs every (value, repetition) cell, seeds `sim.seed + rep`, and reduces
/// each value to one row. Rows keep the order of `spec.values`.
pub fn sweep(cfg: &ScenarioConfig, spec: &SweepSpec) -> Result<Vec<SweepRow>, ScenarioError> {
    let configs = spec
        .values
        .iter()
        .map(|v| {
            let c = set_parameter(cfg, &spec.parameter, v.clone())?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    let reps = spec.repetitions.max(1);
    let cells: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| (0..reps).map(move |r| (i, r as u64)))
        .collect();
    let mut results = cells
        .par_iter()
        .map(|&(i, r)| {
            let seed = cfg.sim.seed.wrapping_add(r);
            run_experiment(&configs[i], seed).map(|rep| (i, seed, rep))
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    results.sort_by_key(|(i, seed, _)| (*i, *seed));

    let rows = spec
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let reports: Vec<&MetricsReport> = results
                .iter()
                .filter(|(j, _, _)| *j == i)
                .map(|(_, _, r)| r)
                .collect();
            let conv: Vec<f64> = reports.iter().filter_map(|r| r.convergence_time).collect();
            let energy: Vec<f64> = reports.iter().map(|r| r.total_energy).collect();
            let thr: Vec<f64> = reports.iter().map(|r| r.aggregate_throughput as f64).collect();
            let delay: Vec<f64> = reports.iter().filter_map(|r| r.average_packet_delay).collect();
            let (e_mean, e_std) = mean_std(&energy).unwrap_or_default();
            let (t_mean, t_std) = mean_std(&thr).unwrap_or_default();
            SweepRow {
                parameter: spec.parameter.clone(),
                value: match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                },
                runs: reports.len() as u32,
                converged_runs: conv.len() as u32,
                convergence_time_mean: mean_std(&conv).map(|m| m.0),
                convergence_time_std: mean_std(&conv).map(|m| m.1),
                total_energy_mean: e_mean,
                total_energy_std: e_std,
                aggregate_throughput_mean: t_mean,
                aggregate_throughput_std: t_std,
                average_packet_delay_mean: mean_std(&delay).map(|m| m.0),
                average_packet_delay_std: mean_std(&delay).map(|m| m.1),
            }
        })
        .collect();
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], cfg: &ScenarioConfig, mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "# rrrt {ARTIFACT_VERSION} scenario={} seed={}",
        cfg.hash(),
        cfg.sim.seed
    )?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(io::Error::other)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_known_and_unknown_parameters() {
        let cfg = ScenarioConfig::default();
        let c = set_parameter(&cfg, "reliability.f_init", parse_value("4")).unwrap();
        assert_eq!(c.reliability.f_init, 4.0);
        let c = set_parameter(&cfg, "transport.t_fdbk", parse_value("0.7")).unwrap();
        assert_eq!(c.transport.t_fdbk, Some(0.7));
        let c = set_parameter(&cfg, "transport.mode", parse_value("fixed")).unwrap();
        assert_eq!(c.transport.mode, super::super::SenderMode::Fixed);
        for bad in ["reliability.nope", "nope", "reliability", ""] {
            assert!(matches!(
                set_parameter(&cfg, bad, parse_value("1")),
                Err(ScenarioError::UnknownParameter(_))
            ));
        }
    }

    #[test]
    fn std_of_single_sample_is_zero() {
        assert_eq!(mean_std(&[3.5]), Some((3.5, 0.0)));
        assert_eq!(mean_std(&[]), None);
        let (m, s) = mean_std(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
