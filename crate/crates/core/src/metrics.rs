//! Per-tick metrics, the event log, and their CSV forms.
//!
//! Both CSV files are UTF-8 with LF line endings and every float printed
//! with exactly three decimals, so equal runs produce equal bytes.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use crate::comms::NodeId;
use crate::dynamics::Vehicle;
use crate::error::Result;
use crate::protocol::MessageId;

pub const METRICS_HEADER: &str = "t,active,congested,cong_l1,cong_l2,cong_l3,mean_speed,msgs_tick,msgs_total,diversions";
pub const EVENTS_HEADER: &str = "t,kind,subject,message_id,detail";

/// Vehicles at or below `threshold` m/s.
pub fn congestion_count(vehicles: &[Vehicle], threshold: f64) -> usize {
    vehicles.iter().filter(|v| v.speed <= threshold).count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub time: f64,
    pub active_vehicles: usize,
    pub congested_vehicles: usize,
    /// Congested vehicles by lane index, both directions combined. Ramp
    /// vehicles only count towards the total.
    pub per_lane_congested: [usize; 3],
    pub mean_speed: f64,
    pub messages_sent_this_tick: u64,
    pub messages_cumulative: u64,
    pub diversions_cumulative: u64,
}

impl MetricsRecord {
    fn write_csv(&self, out: &mut String) {
        let [l1, l2, l3] = self.per_lane_congested;
        let _ = writeln!(
            out,
            "{:.3},{},{},{},{},{},{:.3},{},{},{}",
            self.time,
            self.active_vehicles,
            self.congested_vehicles,
            l1,
            l2,
            l3,
            self.mean_speed,
            self.messages_sent_this_tick,
            self.messages_cumulative,
            self.diversions_cumulative
        );
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsSeries {
    pub records: Vec<MetricsRecord>,
}

impl MetricsSeries {
    pub fn push(&mut self, record: MetricsRecord) {
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    /// The record taken at `time`, to within half a millisecond.
    pub fn at(&self, time: f64) -> Option<&MetricsRecord> {
        self.records.iter().find(|r| (r.time - time).abs() < 5e-4)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(METRICS_HEADER);
        out.push('\n');
        for r in &self.records {
            r.write_csv(&mut out);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Accident,
    Broadcast,
    Receive,
    Diversion,
    Cessation,
    Spawn,
    Despawn,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Accident => "accident",
            EventKind::Broadcast => "broadcast",
            EventKind::Receive => "receive",
            EventKind::Diversion => "diversion",
            EventKind::Cessation => "cessation",
            EventKind::Spawn => "spawn",
            EventKind::Despawn => "despawn",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLogEntry {
    pub time: f64,
    /// Tick phase that produced the entry; entries sort by phase, then
    /// subject, within a tick.
    pub phase: u8,
    pub kind: EventKind,
    pub subject: NodeId,
    pub message_id: Option<MessageId>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub entries: Vec<EventLogEntry>,
}

impl EventLog {
    pub fn push(&mut self, entry: EventLogEntry) {
        self.entries.push(entry);
    }

    /// Orders the entries appended since `start` by phase then subject,
    /// keeping insertion order among equals.
    pub fn settle_from(&mut self, start: usize) {
        self.entries[start..].sort_by_key(|e| (e.phase, e.subject));
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(48 * (self.entries.len() + 1));
        out.push_str(EVENTS_HEADER);
        out.push('\n');
        for e in &self.entries {
            let id = e.message_id.map(|m| m.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{:.3},{},{},{},{}", e.time, e.kind, e.subject, id, e.detail);
        }
        out
    }
}

/// Writes `metrics.csv`, `events.csv`, `config_echo.toml` and
/// `world_final.csv` into `out_dir`, creating it if needed.
pub fn write_outputs(output: &crate::engine::RunOutput, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), output.series.to_csv())?;
    fs::write(dir.join("events.csv"), output.log.to_csv())?;
    fs::write(dir.join("config_echo.toml"), &output.config_echo)?;
    fs::write(dir.join("world_final.csv"), &output.world_final)?;
    Ok(())
}
