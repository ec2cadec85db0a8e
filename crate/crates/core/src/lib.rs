//! Deterministic discrete-event simulation of a wireless sensor network with
//! event-to-sink reliability control, hop-by-hop congestion detection and
//! rate-controlled sub-sink to sub-sink transport.

pub mod congestion;
pub mod metrics;
pub mod reliability;
pub mod scenario;
pub mod sim;
pub mod transport;
