use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    /// A packet instance is created at its origin.
    Generate,
    /// One hop transmission leaves a node.
    Send,
    /// One hop transmission is received by a node.
    Receive,
    /// The instance reached its destination node.
    Deliver,
    Drop,
    /// Timer record, carries no packet.
    Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Overflow,
    Fault,
    Loss,
    NoRoute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketClass {
    SensorData,
    Broadcast,
    TransportData,
    Probe,
    Feedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub node: NodeId,
    pub kind: TraceKind,
    pub packet_id: u64,
    pub class: Option<PacketClass>,
    pub seq: u64,
    pub gen_time: f64,
    pub reason: Option<DropReason>,
}

/// Packet accounting derived from a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Conservation {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.generated == self.delivered + self.dropped + self.in_flight
    }
}

/// Append-only, time-ordered event log of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationTrace {
    events: Vec<TraceEvent>,
    /// Packet instances still travelling when the run stopped.
    pub in_flight: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceCsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace timestamps decrease at row {row}")]
    Unordered { row: usize },
}

impl SimulationTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<TraceEvent>, in_flight: u64) -> Self {
        Self { events, in_flight }
    }

    pub fn push(&mut self, event: TraceEvent) {
        debug_assert!(
            self.events.last().map_or(true, |l| l.time <= event.time),
            "trace must be time ordered"
        );
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_time_ordered(&self) -> bool {
        self.events.windows(2).all(|w| w[0].time <= w[1].time)
    }

    pub fn count(&self, kind: TraceKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Generated versus terminal outcomes over every packet instance.
    pub fn conservation(&self) -> Conservation {
        let mut c = Conservation {
            in_flight: self.in_flight,
            ..Default::default()
        };
        for e in &self.events {
            match e.kind {
                TraceKind::Generate => c.generated += 1,
                TraceKind::Deliver => c.delivered += 1,
                TraceKind::Drop => c.dropped += 1,
                _ => {}
            }
        }
        c
    }

    /// One CSV row per event with a header line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TraceCsvError> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.events {
            w.serialize(e)?;
        }
        if self.events.is_empty() {
            w.write_record([
                "time", "node", "kind", "packet_id", "class", "seq", "gen_time", "reason",
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, in_flight: u64) -> Result<Self, TraceCsvError> {
        let mut r = csv::Reader::from_reader(input);
        let mut events = Vec::new();
        for (row, rec) in r.deserialize::<TraceEvent>().enumerate() {
            let e = rec?;
            if events.last().is_some_and(|l: &TraceEvent| l.time > e.time) {
                return Err(TraceCsvError::Unordered { row });
            }
            events.push(e);
        }
        Ok(Self { events, in_flight })
    }
}
