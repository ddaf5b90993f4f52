//! Simulation trace: an ordered list of records, exported as NDJSON.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::lifecycle::{DeployDecision, ModelType, SourceTier};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    /// Written first; carries the simulated window.
    Header {
        #[serde(rename = "start_ms")]
        start: Timestamp,
        #[serde(rename = "end_ms")]
        end: Timestamp,
    },
    Sensor {
        #[serde(rename = "time_ms")]
        time: Timestamp,
        seq: u64,
    },
    AllocationOpen {
        #[serde(rename = "time_ms")]
        time: Timestamp,
        tier: String,
        allocation: u64,
        #[serde(rename = "expiry_ms")]
        expiry: Timestamp,
    },
    AllocationExpire {
        #[serde(rename = "time_ms")]
        time: Timestamp,
        tier: String,
        allocation: u64,
    },
    Publish {
        #[serde(rename = "time_ms")]
        time: Timestamp,
        model: ModelType,
        tier: SourceTier,
        tier_name: String,
        #[serde(rename = "cutoff_ms")]
        cutoff: Timestamp,
        instance: u64,
        allocation: Option<u64>,
        version: u32,
    },
    Transfer {
        #[serde(rename = "time_ms")]
        time: Timestamp,
        model: ModelType,
        version: u32,
        #[serde(rename = "cutoff_ms")]
        cutoff: Timestamp,
        #[serde(rename = "started_ms")]
        started: Timestamp,
        duration_ms: i64,
    },
    Deploy {
        #[serde(rename = "time_ms")]
        time: Timestamp,
        model: ModelType,
        version: u32,
        #[serde(rename = "cutoff_ms")]
        cutoff: Timestamp,
        source_tier: SourceTier,
        decision: DeployDecision,
    },
    Age {
        #[serde(rename = "time_ms")]
        time: Timestamp,
        model: ModelType,
        /// Since the deployed model's training cutoff.
        age_ms: i64,
        /// Since the deployed model was produced.
        publish_age_ms: i64,
    },
}

impl TraceRecord {
    pub fn time(&self) -> Timestamp {
        match self {
            TraceRecord::Header { start, .. } => *start,
            TraceRecord::Sensor { time, .. }
            | TraceRecord::AllocationOpen { time, .. }
            | TraceRecord::AllocationExpire { time, .. }
            | TraceRecord::Publish { time, .. }
            | TraceRecord::Transfer { time, .. }
            | TraceRecord::Deploy { time, .. }
            | TraceRecord::Age { time, .. } => *time,
        }
    }
}

/// A publish as it appears in a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishView {
    pub time: Timestamp,
    pub model: ModelType,
    pub tier: SourceTier,
    pub cutoff: Timestamp,
    pub instance: u64,
    pub allocation: Option<u64>,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimTrace {
    pub start: Timestamp,
    pub end: Timestamp,
    pub records: Vec<TraceRecord>,
}

impl SimTrace {
    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        SimTrace { start, end, records: Vec::new() }
    }

    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn publishes(&self) -> impl Iterator<Item = PublishView> + '_ {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Publish { time, model, tier, cutoff, instance, allocation, version, .. } => Some(PublishView {
                time: *time,
                model: *model,
                tier: *tier,
                cutoff: *cutoff,
                instance: *instance,
                allocation: *allocation,
                version: *version,
            }),
            _ => None,
        })
    }

    /// Successful deploys of `model` as `(time, cutoff)`.
    pub fn deploys(&self, model: ModelType) -> Vec<(Timestamp, Timestamp)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Deploy { time, model: m, cutoff, decision: DeployDecision::Deployed, .. } if *m == model => {
                    Some((*time, *cutoff))
                }
                _ => None,
            })
            .collect()
    }

    pub fn age_samples(&self, model: ModelType) -> Vec<(Timestamp, i64)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Age { time, model: m, age_ms, .. } if *m == model => Some((*time, *age_ms)),
                _ => None,
            })
            .collect()
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header = TraceRecord::Header { start: self.start, end: self.end };
        for r in std::iter::once(&header).chain(&self.records) {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> io::Result<Self> {
        let mut trace: Option<SimTrace> = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceRecord =
                serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
            match (&mut trace, rec) {
                (None, TraceRecord::Header { start, end }) => trace = Some(SimTrace::new(start, end)),
                (None, _) => return Err(io::Error::new(io::ErrorKind::InvalidData, "trace does not start with a header record")),
                (Some(t), rec) => t.push(rec),
            }
        }
        trace.ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "empty trace file"))
    }
}
