//! Deterministic highway traffic simulation with a simulated vehicular
//! network layer.
//!
//! Vehicles follow an IDM-style car-following law and change lanes with a
//! MOBIL-style incentive rule. A congestion detection and control protocol
//! runs on top: a vehicle stopped by an accident broadcasts a warning,
//! vehicles in range divert out of the blocked lane and relay the warning,
//! and roadside units rebroadcast it over a longer range as a slow-down
//! advisory. Diverted vehicles stop broadcasting once their lane change is
//! done.
//!
//! Runs are driven by a [`ScenarioConfig`] and produce a per-tick
//! [`MetricsSeries`] plus an ordered [`EventLog`].

pub mod chart;
pub mod comms;
pub mod config;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod protocol;
pub mod road;

pub use chart::{render_chart, render_chart_files, ChartKind};
pub use comms::{deliver, in_v2v_range, rsu_covers, Channel, Inbox, NodeId, Rsu, RsuId, Transmission};
pub use config::{load_scenario, AccidentEvent, ScenarioConfig, ScenarioFile};
pub use dynamics::{
    following_accel, kmh_to_ms, lane_change_decision, step_kinematics, DrivingParams, LaneChange,
    LaneChangeParams, Vehicle, VehicleClass, VehicleId, VehicleKind, VehicleStatus,
};
pub use engine::{run, RunOutput, RunSummary, Simulation};
pub use error::{Error, Result};
pub use metrics::{congestion_count, write_outputs, EventKind, EventLog, EventLogEntry, MetricsRecord, MetricsSeries};
pub use protocol::{MessageId, ProtocolMode, ProtocolState, WarningMessage};
pub use road::{adjacent_lanes, build_network, Direction, GapView, Lane, LaneId, RoadNetwork, Snapshot};
