//! Scenario files, experiment orchestration and trace replay.

mod artifacts;
mod config;
mod experiment;
mod world;

use std::path::PathBuf;

pub use artifacts::{RunArtifacts, ARTIFACT_VERSION};
pub use config::{
    CongestionSection, EnergySection, FaultSpec, FieldSection, Layout, Placement,
    RadioSection, ReliabilitySection, ScenarioConfig, SenderMode, SimSection, TransportSection,
    Violation,
};
pub use experiment::{
    parse_value, replay, run, run_experiment, set_parameter, sweep, write_sweep_csv, SweepRow, SweepSpec,
};
pub use world::{simulate, Packet, RunOutput, TransferSummary};

use crate::reliability::ControlError;
use crate::sim::SimError;
use crate::transport::TransportError;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario:{}", list(.0))]
    Validation(Vec<Violation>),
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("corrupt trace file at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| format!("\n  {x}")).collect()
}
