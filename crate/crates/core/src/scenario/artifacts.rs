use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::metrics::MetricsReport;
use crate::reliability::ControllerRow;
use crate::sim::{SimulationTrace, TraceCsvError};
use crate::transport::ConnectionRow;

use super::ScenarioError;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
const MAGIC: &str = "# rrrt trace v1";

/// Serializable record of one run: everything metric extraction reads.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub scenario_hash: String,
    pub seed: u64,
    pub e_tx: f64,
    pub e_rx: f64,
    pub beta: f64,
    pub trace: SimulationTrace,
    pub decisions: Vec<ControllerRow>,
    pub connection: Vec<ConnectionRow>,
}

fn corrupt(offset: usize, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Corrupt {
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn csv_offset(base: usize, e: &csv::Error) -> usize {
    base + e.position().map_or(0, |p| p.byte() as usize)
}

fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(io::Error::other)?;
    }
    w.flush()
}

fn read_rows<T: DeserializeOwned>(body: &str, base: usize) -> Result<Vec<T>, ScenarioError> {
    let mut r = csv::Reader::from_reader(body.as_bytes());
    r.deserialize()
        .map(|rec| rec.map_err(|e| corrupt(csv_offset(base, &e), e.to_string())))
        .collect()
}

impl RunArtifacts {
    pub fn empty() -> Self {
        Self {
            scenario_hash: String::new(),
            seed: 0,
            e_tx: 0.0,
            e_rx: 0.0,
            beta: 0.05,
            trace: SimulationTrace::new(),
            decisions: Vec::new(),
            connection: Vec::new(),
        }
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport::extract(
            &self.trace,
            &self.decisions,
            self.e_tx,
            self.e_rx,
            self.beta,
            self.seed,
        )
    }

    /// One-line preamble for standalone CSV outputs.
    pub fn csv_preamble(&self) -> String {
        format!(
            "# rrrt {ARTIFACT_VERSION} scenario={} seed={}\n",
            self.scenario_hash, self.seed
        )
    }

    pub fn write_intervals_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(self.csv_preamble().as_bytes())?;
        write_rows(&self.decisions, out)
    }

    pub fn write_connection_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(self.csv_preamble().as_bytes())?;
        write_rows(&self.connection, out)
    }

    /// Sectioned trace file: preamble, event rows, controller rows,
    /// connection rows and an end marker with row counts.
    pub fn write_trace_file<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "# version={ARTIFACT_VERSION}")?;
        writeln!(out, "# scenario_hash={}", self.scenario_hash)?;
        writeln!(out, "# seed={}", self.seed)?;
        writeln!(out, "# in_flight={}", self.trace.in_flight)?;
        writeln!(out, "# e_tx={}", self.e_tx)?;
        writeln!(out, "# e_rx={}", self.e_rx)?;
        writeln!(out, "# beta={}", self.beta)?;
        writeln!(out, "[events]")?;
        self.trace.write_csv(&mut out).map_err(|e| match e {
            TraceCsvError::Csv(e) => io::Error::other(e),
            other => io::Error::other(other.to_string()),
        })?;
        writeln!(out, "[intervals]")?;
        write_rows(&self.decisions, &mut out)?;
        writeln!(out, "[connection]")?;
        write_rows(&self.connection, &mut out)?;
        writeln!(
            out,
            "# end events={} intervals={} connection={}",
            self.trace.len(),
            self.decisions.len(),
            self.connection.len()
        )
    }

    /// Parses a trace file. An empty file yields empty artifacts.
    pub fn read_trace_file(bytes: &[u8]) -> Result<Self, ScenarioError> {
        let text = std::str::from_utf8(bytes).map_err(|e| corrupt(e.valid_up_to(), "not UTF-8"))?;
        if text.trim().is_empty() {
            return Ok(Self::empty());
        }
        let mut meta: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        let mut sections: Vec<(&str, usize, String)> = Vec::new();
        let mut trailer: Option<(usize, &str)> = None;
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let start = offset;
            offset += line.len();
            let l = line.trim_end_matches(['\n', '\r']);
            if start == 0 {
                if l != MAGIC {
                    return Err(corrupt(0, "not an rrrt trace file"));
                }
                continue;
            }
            if trailer.is_some() {
                if l.is_empty() {
                    continue;
                }
                return Err(corrupt(start, "content after end marker"));
            }
            if let Some(rest) = l.strip_prefix("# end ") {
                trailer = Some((start, rest));
            } else if let Some(rest) = l.strip_prefix("# ") {
                let Some((k, v)) = rest.split_once('=') else {
                    return Err(corrupt(start, "malformed preamble line"));
                };
                if !sections.is_empty() {
                    return Err(corrupt(start, "preamble line inside a section"));
                }
                meta.insert(k, (start, v));
            } else if let Some(name) = l.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                sections.push((name, offset, String::new()));
            } else if let Some(last) = sections.last_mut() {
                last.2.push_str(line);
            } else {
                return Err(corrupt(start, "data before the first section"));
            }
        }
        let Some((trailer_at, counts)) = trailer else {
            return Err(corrupt(text.len(), "missing end marker, file truncated"));
        };

        fn field<T: std::str::FromStr>(
            meta: &BTreeMap<&str, (usize, &str)>,
            key: &str,
            missing_at: usize,
        ) -> Result<T, ScenarioError> {
            let (at, v) = meta
                .get(key)
                .ok_or_else(|| corrupt(missing_at, format!("missing `{key}`")))?;
            v.parse()
                .map_err(|_| corrupt(*at, format!("bad value for `{key}`")))
        }
        let first_section = sections.first().map_or(trailer_at, |s| s.1);
        let scenario_hash: String = field(&meta, "scenario_hash", first_section)?;
        let seed: u64 = field(&meta, "seed", first_section)?;
        let in_flight: u64 = field(&meta, "in_flight", first_section)?;
        let e_tx: f64 = field(&meta, "e_tx", first_section)?;
        let e_rx: f64 = field(&meta, "e_rx", first_section)?;
        let beta: f64 = field(&meta, "beta", first_section)?;

        let section = |name: &str| {
            sections
                .iter()
                .find(|s| s.0 == name)
                .ok_or_else(|| corrupt(trailer_at, format!("missing section [{name}]")))
        };
        let (_, base, body) = section("events")?;
        let trace = SimulationTrace::read_csv(body.as_bytes(), in_flight).map_err(|e| match e {
            TraceCsvError::Csv(e) => corrupt(csv_offset(*base, &e), e.to_string()),
            other => corrupt(*base, other.to_string()),
        })?;
        let (_, base, body) = section("intervals")?;
        let decisions: Vec<ControllerRow> = read_rows(body, *base)?;
        let (_, base, body) = section("connection")?;
        let connection: Vec<ConnectionRow> = read_rows(body, *base)?;

        let mut expected = BTreeMap::new();
        for part in counts.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| corrupt(trailer_at, "malformed end marker"))?;
            let n: usize = v.parse().map_err(|_| corrupt(trailer_at, "malformed end marker"))?;
            expected.insert(k, n);
        }
        for (k, n) in [
            ("events", trace.len()),
            ("intervals", decisions.len()),
            ("connection", connection.len()),
        ] {
            if expected.get(k) != Some(&n) {
                return Err(corrupt(trailer_at, format!("{k} row count does not match end marker")));
            }
        }
        Ok(Self {
            scenario_hash,
            seed,
            e_tx,
            e_rx,
            beta,
            trace,
            decisions,
            connection,
        })
    }
}
