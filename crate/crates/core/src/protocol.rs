//! Congestion detection and control protocol state machines.
//!
//! Vehicle side:
//!
//! * a vehicle stopped by an accident becomes the *affected* vehicle and
//!   broadcasts a warning naming its blocked lane, every rebroadcast
//!   interval, for as long as the incident lasts;
//! * a receiver driving in the blocked lane with the incident ahead (within
//!   the lookahead) decides to divert, stamps its decision into the
//!   message's decision field and forwards the updated copy, up to
//!   `max_hops` relays deep;
//! * once the diverting lane change is done the vehicle stops broadcasting
//!   for good (cessation);
//! * a copy relayed by a roadside unit tells other same-direction vehicles
//!   upstream of the incident to slow down.
//!
//! Roadside unit side: every new message id heard from a vehicle gets one
//! periodic rebroadcast schedule, flagged as relayed, until the incident
//! clears or the message expires.
//!
//! Duplicate message ids are never acted on or forwarded twice, but every
//! vehicle remembers the first copy it got so it can still divert when it
//! later comes within lookahead of a known incident.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::comms::{NodeId, Rsu, Transmission};
use crate::dynamics::{Vehicle, VehicleId};
use crate::error::{Error, Result};
use crate::road::{Direction, Lane, LaneId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageId(pub u64);

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// The field a receiver updates before forwarding: the diversion it took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionField {
    None,
    DiversionTaken(LaneId),
}

impl fmt::Display for DecisionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecisionField::None => f.write_str("none"),
            DecisionField::DiversionTaken(l) => write!(f, "divert:{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarningMessage {
    pub message_id: MessageId,
    pub origin_vehicle_id: VehicleId,
    pub origin_speed: f64,
    pub blocked_lane: LaneId,
    /// Position of the incident in the blocked lane's direction frame.
    pub incident_position: f64,
    pub created_tick: u64,
    pub decision_field: DecisionField,
    pub relayed_by_rsu: bool,
    pub hop_count: u32,
}

impl WarningMessage {
    /// Fields in declaration order, `;`-separated, floats to 3 decimals.
    /// This is the form written to the event log.
    pub fn canonical(&self) -> String {
        format!(
            "{};{};{:.3};{};{:.3};{};{};{};{}",
            self.message_id,
            self.origin_vehicle_id,
            self.origin_speed,
            self.blocked_lane,
            self.incident_position,
            self.created_tick,
            self.decision_field,
            u8::from(self.relayed_by_rsu),
            self.hop_count
        )
    }

    /// Distance from `position` (same direction frame) forward to the
    /// incident, if the vehicle travels in the blocked lane's direction.
    fn distance_ahead(&self, direction: Direction, position: f64) -> Option<f64> {
        (direction == self.blocked_lane.direction).then(|| self.incident_position - position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProtocolMode {
    #[default]
    Idle,
    AffectedBroadcasting,
    InformedDiverting,
    Forwarding,
    Ceased,
}

impl ProtocolMode {
    pub fn transmits(self) -> bool {
        matches!(self, ProtocolMode::AffectedBroadcasting | ProtocolMode::Forwarding)
    }
}

impl fmt::Display for ProtocolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolMode::Idle => "idle",
            ProtocolMode::AffectedBroadcasting => "affected",
            ProtocolMode::InformedDiverting => "diverting",
            ProtocolMode::Forwarding => "forwarding",
            ProtocolMode::Ceased => "ceased",
        })
    }
}

/// A slow-down advice in force until the vehicle passes the incident.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Advisory {
    pub message_id: MessageId,
    pub incident_position: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolState {
    pub mode: ProtocolMode,
    /// First copy of every message id heard or originated.
    pub known: BTreeMap<MessageId, WarningMessage>,
    pub last_broadcast_tick: Option<u64>,
    pub planned_target_lane: Option<LaneId>,
    /// Message this vehicle transmits while affected or forwarding.
    pub outgoing: Option<WarningMessage>,
    pub advisory: Option<Advisory>,
    pub transmissions: u64,
}

impl ProtocolState {
    pub fn knows(&self, id: MessageId) -> bool {
        self.known.contains_key(&id)
    }

    /// Lanes named blocked by known incidents ahead within `lookahead`.
    pub fn blocked_lanes_ahead(&self, direction: Direction, position: f64, lookahead: f64) -> Vec<LaneId> {
        let mut lanes: Vec<LaneId> = self
            .known
            .values()
            .filter(|m| m.distance_ahead(direction, position).is_some_and(|d| d > 0.0 && d <= lookahead))
            .map(|m| m.blocked_lane)
            .collect();
        lanes.sort();
        lanes.dedup();
        lanes
    }

    /// Drops everything tied to a cleared incident.
    pub fn forget(&mut self, id: MessageId) {
        self.known.remove(&id);
        if self.advisory.is_some_and(|a| a.message_id == id) {
            self.advisory = None;
        }
        if self.outgoing.as_ref().is_some_and(|m| m.message_id == id) {
            self.outgoing = None;
            if self.mode == ProtocolMode::Forwarding {
                self.mode = ProtocolMode::Ceased;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub rebroadcast_ticks: u64,
    pub max_hops: u32,
    pub lookahead: f64,
    pub advisory_speed: f64,
    /// Whether diverted vehicles stop broadcasting. Off only for overhead
    /// comparisons.
    pub cessation: bool,
    pub message_ttl_ticks: Option<u64>,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            rebroadcast_ticks: 2,
            max_hops: 3,
            lookahead: 2_000.0,
            advisory_speed: 0.6 * 80.0 / 3.6,
            cessation: true,
            message_ttl_ticks: None,
        }
    }
}

/// What a receiver needs to know about itself and its surroundings.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalView {
    pub id: VehicleId,
    pub lane: Lane,
    /// Position in the vehicle's own direction frame.
    pub position: f64,
    pub blocked: bool,
    /// Net gap to the nearest leader in each lane adjacent to the current
    /// main lane.
    pub neighbour_gaps: Vec<(LaneId, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Ignore,
    Divert(LaneId),
    HeedAdvisory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reception {
    pub action: Action,
    pub forward: bool,
    pub updated: Option<WarningMessage>,
    /// False for duplicates.
    pub first_copy: bool,
}

impl Reception {
    fn ignore(first_copy: bool) -> Reception {
        Reception { action: Action::Ignore, forward: false, updated: None, first_copy }
    }
}

/// Target lane for a diversion: prefer lanes no live message names as
/// blocked, then the larger net gap, then the lower index.
pub fn choose_diversion_lane(neighbour_gaps: &[(LaneId, f64)], blocked: &[LaneId]) -> Option<LaneId> {
    neighbour_gaps
        .iter()
        .min_by(|(la, ga), (lb, gb)| {
            blocked
                .contains(la)
                .cmp(&blocked.contains(lb))
                .then(gb.total_cmp(ga))
                .then(la.index.cmp(&lb.index))
        })
        .map(|(l, _)| *l)
}

/// Accident handler: turns a freshly blocked vehicle into the affected
/// broadcaster. Returns the new warning, or `None` if the vehicle already
/// has a message stream or is not on a main lane.
pub fn on_accident(vehicle: &mut Vehicle, message_id: MessageId, tick: u64) -> Option<WarningMessage> {
    let state = &vehicle.protocol;
    if state.mode == ProtocolMode::AffectedBroadcasting || !vehicle.is_blocked() {
        return None;
    }
    let lane = vehicle.lane.main()?;
    let msg = WarningMessage {
        message_id,
        origin_vehicle_id: vehicle.id,
        origin_speed: vehicle.speed,
        blocked_lane: lane,
        incident_position: vehicle.position,
        created_tick: tick,
        decision_field: DecisionField::None,
        relayed_by_rsu: false,
        hop_count: 0,
    };
    let state = &mut vehicle.protocol;
    state.mode = ProtocolMode::AffectedBroadcasting;
    state.known.insert(message_id, msg.clone());
    state.outgoing = Some(msg.clone());
    state.last_broadcast_tick = None;
    state.planned_target_lane = None;
    state.advisory = None;
    Some(msg)
}

fn due(last: Option<u64>, now: u64, interval: u64) -> bool {
    last.is_none_or(|t| now >= t + interval.max(1))
}

/// Emits the vehicle's outgoing message if it is broadcasting and its
/// rebroadcast interval has elapsed.
pub fn broadcast_tick(
    state: &mut ProtocolState,
    source: VehicleId,
    emit_position: f64,
    now: u64,
    params: &ProtocolParams,
) -> Vec<Transmission> {
    if !state.mode.transmits() || !due(state.last_broadcast_tick, now, params.rebroadcast_ticks) {
        return Vec::new();
    }
    let Some(message) = state.outgoing.clone() else {
        return Vec::new();
    };
    state.last_broadcast_tick = Some(now);
    state.transmissions += 1;
    vec![Transmission { message, source: NodeId::Vehicle(source), emit_position, emit_tick: now }]
}

fn validate(msg: &WarningMessage, params: &ProtocolParams) -> Result<()> {
    let reason = if !msg.blocked_lane.is_valid() {
        format!("unknown lane index {}", msg.blocked_lane.index)
    } else if msg.hop_count > params.max_hops {
        format!("hop count {} exceeds {}", msg.hop_count, params.max_hops)
    } else if !msg.incident_position.is_finite() {
        "non-finite incident position".to_string()
    } else {
        return Ok(());
    };
    Err(Error::MalformedMessage { id: msg.message_id.0, reason })
}

/// Receive handler for one delivered message.
pub fn on_receive(
    state: &mut ProtocolState,
    view: &LocalView,
    msg: &WarningMessage,
    params: &ProtocolParams,
) -> Result<Reception> {
    validate(msg, params)?;
    if state.knows(msg.message_id) {
        return Ok(Reception::ignore(false));
    }
    state.known.insert(msg.message_id, msg.clone());
    if view.blocked || state.mode == ProtocolMode::AffectedBroadcasting {
        return Ok(Reception::ignore(true));
    }

    let direction = view.lane.direction();
    let Some(ahead) = msg.distance_ahead(direction, view.position).filter(|d| *d > 0.0) else {
        return Ok(Reception::ignore(true));
    };

    if view.lane == Lane::Main(msg.blocked_lane) && ahead <= params.lookahead {
        let blocked = state.blocked_lanes_ahead(direction, view.position, params.lookahead);
        let Some(target) = choose_diversion_lane(&view.neighbour_gaps, &blocked) else {
            return Ok(Reception::ignore(true));
        };
        state.planned_target_lane = Some(target);
        let can_forward = msg.hop_count < params.max_hops;
        let (forward, updated) = match state.mode {
            ProtocolMode::Idle | ProtocolMode::InformedDiverting if can_forward => {
                let updated = WarningMessage {
                    decision_field: DecisionField::DiversionTaken(target),
                    relayed_by_rsu: false,
                    hop_count: msg.hop_count + 1,
                    ..msg.clone()
                };
                state.mode = ProtocolMode::Forwarding;
                state.outgoing = Some(updated.clone());
                state.last_broadcast_tick = None;
                (true, Some(updated))
            }
            ProtocolMode::Idle => {
                state.mode = ProtocolMode::InformedDiverting;
                (false, None)
            }
            _ => (false, None),
        };
        return Ok(Reception { action: Action::Divert(target), forward, updated, first_copy: true });
    }

    if msg.relayed_by_rsu {
        let nearer = state.advisory.is_none_or(|a| {
            msg.incident_position - view.position < a.incident_position - view.position
        });
        if nearer {
            state.advisory = Some(Advisory {
                message_id: msg.message_id,
                incident_position: msg.incident_position,
                speed: params.advisory_speed,
            });
        }
        return Ok(Reception { action: Action::HeedAdvisory, forward: false, updated: None, first_copy: true });
    }
    Ok(Reception::ignore(true))
}

/// Re-checks remembered incidents for a vehicle not already diverting.
/// Returns the lane to divert to when the vehicle now sits in a known
/// blocked lane within lookahead.
pub fn pending_diversion(state: &mut ProtocolState, view: &LocalView, params: &ProtocolParams) -> Option<LaneId> {
    if view.blocked || state.planned_target_lane.is_some() {
        return None;
    }
    let lane = view.lane.main()?;
    let blocked = state.blocked_lanes_ahead(lane.direction, view.position, params.lookahead);
    if !blocked.contains(&lane) {
        return None;
    }
    let target = choose_diversion_lane(&view.neighbour_gaps, &blocked)?;
    state.planned_target_lane = Some(target);
    if state.mode == ProtocolMode::Idle {
        state.mode = ProtocolMode::InformedDiverting;
    }
    Some(target)
}

/// Ends an advisory once the vehicle has passed its incident.
pub fn refresh_advisory(state: &mut ProtocolState, view: &LocalView) {
    if let Some(adv) = state.advisory {
        if view.position >= adv.incident_position {
            state.advisory = None;
        }
    }
}

/// Called after a diverting vehicle has physically changed lane. Returns
/// `true` when the vehicle has just ceased broadcasting.
pub fn on_lane_change_complete(state: &mut ProtocolState, params: &ProtocolParams) -> bool {
    if state.planned_target_lane.take().is_none() {
        return false;
    }
    match state.mode {
        ProtocolMode::InformedDiverting | ProtocolMode::Forwarding if params.cessation => {
            state.mode = ProtocolMode::Ceased;
            state.outgoing = None;
            true
        }
        ProtocolMode::InformedDiverting => {
            state.mode = ProtocolMode::Idle;
            false
        }
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsuSchedule {
    pub message: WarningMessage,
    pub last_tick: Option<u64>,
    pub expires_tick: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsuState {
    pub rsu: Rsu,
    pub schedules: BTreeMap<MessageId, RsuSchedule>,
    pub seen: BTreeSet<MessageId>,
    pub transmissions: u64,
}

impl RsuState {
    pub fn new(rsu: Rsu) -> RsuState {
        RsuState { rsu, schedules: BTreeMap::new(), seen: BTreeSet::new(), transmissions: 0 }
    }

    pub fn clear(&mut self, id: MessageId) {
        self.schedules.remove(&id);
    }
}

/// Starts a rebroadcast schedule for a message id not seen before.
/// Returns `true` when a schedule was created.
pub fn rsu_on_receive(state: &mut RsuState, msg: &WarningMessage, params: &ProtocolParams) -> bool {
    if !state.seen.insert(msg.message_id) {
        return false;
    }
    let message = WarningMessage { relayed_by_rsu: true, ..msg.clone() };
    let expires_tick = params.message_ttl_ticks.map(|ttl| msg.created_tick + ttl);
    state.schedules.insert(msg.message_id, RsuSchedule { message, last_tick: None, expires_tick });
    true
}

pub fn rsu_broadcast_tick(state: &mut RsuState, now: u64, params: &ProtocolParams) -> Vec<Transmission> {
    state.schedules.retain(|_, s| s.expires_tick.is_none_or(|t| now < t));
    let mut out = Vec::new();
    for s in state.schedules.values_mut() {
        if due(s.last_tick, now, params.rebroadcast_ticks) {
            s.last_tick = Some(now);
            out.push(Transmission {
                message: s.message.clone(),
                source: NodeId::Rsu(state.rsu.id),
                emit_position: state.rsu.position,
                emit_tick: now,
            });
        }
    }
    state.transmissions += out.len() as u64;
    out
}
