use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rrrt::metrics::MetricsReport;
use rrrt::scenario::{
    parse_value, sweep, write_sweep_csv, RunArtifacts, ScenarioConfig, ScenarioError, SweepSpec,
    ARTIFACT_VERSION,
};

#[derive(Parser)]
#[command(name = "rrrt", version, about = "Sensor network reliability and transport simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Structured,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and report its metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides `sim.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the trace file, per-interval and per-connection CSVs
        /// and the summary.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "structured")]
        format: Format,
    },
    /// Run a scenario for each value of one parameter, averaging over seeds.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Dotted parameter path, e.g. `reliability.f_init`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Defaults to `sim.repetitions`.
        #[arg(long)]
        reps: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV output file; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the metrics of a prior run from its trace file.
    Replay {
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "structured")]
        format: Format,
    },
    /// Check a scenario file and list every violation.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Serialize)]
struct Summary<'a> {
    version: &'a str,
    scenario_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    version: &'a str,
    scenario_hash: &'a str,
    seed: u64,
    convergence_time: Option<f64>,
    total_energy: f64,
    aggregate_throughput: u64,
    average_packet_delay: Option<f64>,
    intervals: usize,
}

fn write_summary<W: Write>(art: &RunArtifacts, report: &MetricsReport, format: Format, mut out: W) -> Result<()> {
    match format {
        Format::Structured => {
            let s = Summary {
                version: ARTIFACT_VERSION,
                scenario_hash: &art.scenario_hash,
                seed: art.seed,
                report,
            };
            serde_json::to_writer_pretty(&mut out, &s)?;
            writeln!(out)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.serialize(SummaryRow {
                version: ARTIFACT_VERSION,
                scenario_hash: &art.scenario_hash,
                seed: art.seed,
                convergence_time: report.convergence_time,
                total_energy: report.total_energy,
                aggregate_throughput: report.aggregate_throughput,
                average_packet_delay: report.average_packet_delay,
                intervals: report.per_interval.len(),
            })?;
            w.flush()?;
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn cmd_run(scenario: &Path, seed: Option<u64>, out: Option<&Path>, format: Format) -> Result<()> {
    let cfg = ScenarioConfig::load(scenario)?;
    let seed = seed.unwrap_or(cfg.sim.seed);
    let art = rrrt::scenario::run(&cfg, seed)?;
    let report = art.report();
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            let mut w = create(&dir.join("trace.rrrt"))?;
            art.write_trace_file(&mut w)?;
            w.flush()?;
            let mut w = create(&dir.join("intervals.csv"))?;
            art.write_intervals_csv(&mut w)?;
            w.flush()?;
            let mut w = create(&dir.join("connection.csv"))?;
            art.write_connection_csv(&mut w)?;
            w.flush()?;
            let name = match format {
                Format::Structured => "summary.json",
                Format::Csv => "summary.csv",
            };
            let mut w = create(&dir.join(name))?;
            write_summary(&art, &report, format, &mut w)?;
            w.flush()?;
        }
        None => write_summary(&art, &report, format, io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_sweep(
    scenario: &Path,
    param: String,
    values: &[String],
    reps: Option<u32>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let mut cfg = ScenarioConfig::load(scenario)?;
    if let Some(s) = seed {
        cfg.sim.seed = s;
    }
    let spec = SweepSpec {
        parameter: param,
        values: values.iter().map(|v| parse_value(v)).collect(),
        repetitions: reps.unwrap_or(cfg.sim.repetitions),
    };
    let rows = sweep(&cfg, &spec)?;
    match out {
        Some(p) => {
            let mut w = create(p)?;
            write_sweep_csv(&rows, &cfg, &mut w)?;
            w.flush()?;
        }
        None => write_sweep_csv(&rows, &cfg, io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_replay(trace: &Path, format: Format) -> Result<()> {
    let bytes = fs::read(trace).map_err(|source| ScenarioError::Io {
        path: trace.to_path_buf(),
        source,
    })?;
    let art = RunArtifacts::read_trace_file(&bytes)?;
    write_summary(&art, &art.report(), format, io::stdout().lock())
}

fn cmd_validate(scenario: &Path) -> Result<()> {
    let cfg = ScenarioConfig::load(scenario)?;
    println!("ok {} ({})", scenario.display(), cfg.hash());
    Ok(())
}

/// Exit code per error category.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<ScenarioError>() {
        Some(ScenarioError::Validation(_) | ScenarioError::Parse(_) | ScenarioError::UnknownParameter(_)) => 2,
        Some(ScenarioError::Io { .. }) => 3,
        Some(ScenarioError::Corrupt { .. }) => 4,
        Some(ScenarioError::Sim(_) | ScenarioError::Control(_) | ScenarioError::Transport(_)) => 5,
        None if err.downcast_ref::<io::Error>().is_some() => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            format,
        } => cmd_run(&scenario, seed, out.as_deref(), format),
        Command::Sweep {
            scenario,
            param,
            values,
            reps,
            seed,
            out,
        } => cmd_sweep(&scenario, param, &values, reps, seed, out.as_deref()),
        Command::Replay { trace, format } => cmd_replay(&trace, format),
        Command::Validate { scenario } => cmd_validate(&scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
