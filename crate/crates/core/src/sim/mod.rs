//! Deterministic discrete-event kernel: virtual clock, event queue, seeded
//! per-node random streams, topology with static routes, per-hop delay model
//! and fault injection.

mod delay;
mod kernel;
mod rng;
mod topology;
mod trace;

pub use delay::{ChannelAccess, DelayBreakdown, SIGNAL_SPEED};
pub use kernel::{EventHandle, Kernel, SimEvent};
pub use rng::RngStream;
pub use topology::{
    Fault, FaultMode, FaultTarget, LinkParams, LinkRef, Node, NodeId, Role, Topology,
};
pub use trace::{
    Conservation, DropReason, PacketClass, SimulationTrace, TraceCsvError, TraceEvent, TraceKind,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("cannot schedule at {time} before current clock {now}")]
    PastTime { time: f64, now: f64 },
    #[error("no link {from} -> {to}")]
    UnknownLink { from: NodeId, to: NodeId },
    #[error("no route from {from} toward {dest}")]
    NoRoute { from: NodeId, dest: NodeId },
    #[error("fault target does not exist")]
    UnknownTarget,
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("invariant violated: {0}")]
    Invariant(String),
}
