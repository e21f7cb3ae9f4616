use std::io;

use thiserror::Error;

use crate::dynamics::VehicleId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid road geometry: {0}")]
    InvalidGeometry(String),

    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),

    /// The car-following law was asked about a leader that overlaps the
    /// follower. Callers treat this as an emergency stop.
    #[error("non-positive net gap ({0:.3} m)")]
    NonPositiveGap(f64),

    #[error("malformed warning message {id}: {reason}")]
    MalformedMessage { id: u64, reason: String },

    #[error("cannot parse scenario {path}: {message}")]
    Parse { path: String, message: String },

    #[error("invalid scenario: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("invariant breach at tick {tick}: {detail}")]
    InvariantBreach { tick: u64, detail: String, dump: String },

    #[error("metrics schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
