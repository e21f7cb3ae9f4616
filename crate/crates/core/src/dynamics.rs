//! Longitudinal car-following, lane changing and kinematic integration.
//!
//! Car following uses the Intelligent Driver Model closed form
//!
//! ```text
//! a = a_max * [1 - (v/v0)^delta - (s*/s)^2]
//! s* = s0 + max(0, v*T + v*dv / (2*sqrt(a_max*b)))
//! ```
//!
//! with the free-road term floored at `-b` so a vehicle above its desired
//! speed (e.g. entering an advisory zone) relaxes at comfortable
//! deceleration, and the total clamped to `[-b_emergency, a_max]`.
//!
//! Lane changes use a MOBIL-style rule: a change must be safe for the new
//! follower and for the changer itself, and its politeness-weighted
//! incentive must exceed the changing threshold.

use std::fmt;

use crate::error::{Error, Result};
use crate::protocol::ProtocolState;
use crate::road::{GapView, Lane, RoadNetwork, Snapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VehicleId(pub u64);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

pub fn kmh_to_ms(kmh: f64) -> f64 {
    kmh * 1000.0 / 3600.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VehicleKind {
    Car,
    Truck,
}

impl fmt::Display for VehicleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VehicleKind::Car => "car",
            VehicleKind::Truck => "truck",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleClass {
    pub kind: VehicleKind,
    pub desired_speed: f64,
    pub length: f64,
}

impl VehicleClass {
    pub fn car() -> VehicleClass {
        VehicleClass { kind: VehicleKind::Car, desired_speed: kmh_to_ms(108.0), length: 5.0 }
    }

    pub fn truck() -> VehicleClass {
        VehicleClass { kind: VehicleKind::Truck, desired_speed: kmh_to_ms(54.0), length: 12.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivingParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    pub min_gap: f64,
    pub accel_exponent: f64,
    pub speed_limit: f64,
    pub emergency_decel: f64,
}

impl DrivingParams {
    pub fn car() -> DrivingParams {
        DrivingParams {
            desired_speed: kmh_to_ms(108.0),
            time_headway: 1.5,
            max_accel: 1.5,
            comfortable_decel: 2.0,
            min_gap: 2.0,
            accel_exponent: 4.0,
            speed_limit: kmh_to_ms(80.0),
            emergency_decel: 8.0,
        }
    }

    pub fn truck() -> DrivingParams {
        DrivingParams { desired_speed: kmh_to_ms(54.0), max_accel: 1.0, ..DrivingParams::car() }
    }

    /// The speed the driver actually aims for.
    pub fn target_speed(&self) -> f64 {
        self.desired_speed.min(self.speed_limit)
    }

    pub fn capped(&self, cap: f64) -> DrivingParams {
        DrivingParams { speed_limit: self.speed_limit.min(cap), ..*self }
    }

    pub fn is_valid(&self) -> bool {
        [
            self.desired_speed,
            self.time_headway,
            self.max_accel,
            self.comfortable_decel,
            self.min_gap,
            self.accel_exponent,
            self.speed_limit,
            self.emergency_decel,
        ]
        .iter()
        .all(|x| *x > 0.0 && x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChangeParams {
    pub politeness: f64,
    pub changing_threshold: f64,
    pub safe_decel: f64,
}

impl Default for LaneChangeParams {
    fn default() -> Self {
        LaneChangeParams { politeness: 0.25, changing_threshold: 0.2, safe_decel: 4.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VehicleStatus {
    Active,
    Blocked,
    Diverting,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub position: f64,
    pub lane: Lane,
    pub speed: f64,
    pub accel: f64,
    pub driving: DrivingParams,
    pub status: VehicleStatus,
    pub protocol: ProtocolState,
    pub last_lane_change: Option<u64>,
    /// Consecutive ticks spent at exactly zero speed.
    pub stopped_ticks: u64,
}

impl Vehicle {
    pub fn new(
        id: VehicleId,
        class: VehicleClass,
        driving: DrivingParams,
        lane: Lane,
        position: f64,
        speed: f64,
    ) -> Vehicle {
        Vehicle {
            id,
            class,
            position,
            lane,
            speed,
            accel: 0.0,
            driving,
            status: VehicleStatus::Active,
            protocol: ProtocolState::default(),
            last_lane_change: None,
            stopped_ticks: 0,
        }
    }

    pub fn rear(&self) -> f64 {
        self.position - self.class.length
    }

    pub fn is_blocked(&self) -> bool {
        self.status == VehicleStatus::Blocked
    }

    /// Driving parameters with any active slow-down advisory applied.
    pub fn effective_params(&self) -> DrivingParams {
        match self.protocol.advisory {
            Some(adv) => self.driving.capped(adv.speed),
            None => self.driving,
        }
    }
}

/// Acceleration behind a leader at `net_gap` closing at `approach_rate`
/// (own speed minus leader speed). Pass `f64::INFINITY` for an empty road.
pub fn following_accel(speed: f64, net_gap: f64, approach_rate: f64, params: &DrivingParams) -> Result<f64> {
    if net_gap <= 0.0 || net_gap.is_nan() {
        return Err(Error::NonPositiveGap(net_gap));
    }
    let p = params;
    let v0 = p.target_speed();
    let free = (p.max_accel * (1.0 - (speed / v0).powf(p.accel_exponent))).max(-p.comfortable_decel);
    let interaction = if net_gap.is_finite() {
        let dynamic = speed * p.time_headway
            + speed * approach_rate / (2.0 * (p.max_accel * p.comfortable_decel).sqrt());
        let desired_gap = p.min_gap + dynamic.max(0.0);
        -p.max_accel * (desired_gap / net_gap).powi(2)
    } else {
        0.0
    };
    Ok((free + interaction).clamp(-p.emergency_decel, p.max_accel))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub gap: f64,
    pub speed: f64,
}

/// Acceleration `vehicle` would choose behind `leader`. A non-positive
/// gap yields the emergency deceleration; blocked vehicles never move.
pub fn accel_behind(vehicle: &Vehicle, leader: Option<Leader>) -> f64 {
    if vehicle.is_blocked() {
        return 0.0;
    }
    let params = vehicle.effective_params();
    let (gap, rate) = match leader {
        Some(l) => (l.gap, vehicle.speed - l.speed),
        None => (f64::INFINITY, 0.0),
    };
    following_accel(vehicle.speed, gap, rate, &params).unwrap_or(-params.emergency_decel)
}

/// Effective leader in `lane` for a vehicle at `position`: the nearest
/// vehicle ahead, or the ramp end if that is closer.
pub fn lane_leader(view: &GapView, lane: Lane, position: f64, network: &RoadNetwork) -> Option<Leader> {
    let vehicle = view.leader_id.map(|_| Leader { gap: view.net_gap, speed: view.leader_speed });
    if lane != Lane::Ramp {
        return vehicle;
    }
    let end = Leader { gap: (network.lane_end(Lane::Ramp) - position).max(0.0), speed: 0.0 };
    match vehicle {
        Some(v) if v.gap <= end.gap => Some(v),
        _ => Some(end),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneChange {
    Stay,
    Change,
}

/// Politeness-weighted incentive for moving `vehicle` into `target`, or
/// `None` when the change is unsafe.
pub fn lane_change_incentive(
    vehicle: &Vehicle,
    target: Lane,
    traffic: &Snapshot<'_>,
    network: &RoadNetwork,
    params: &LaneChangeParams,
) -> Option<f64> {
    if vehicle.is_blocked() || target == vehicle.lane {
        return None;
    }
    let current = traffic.gap_view_of(vehicle, vehicle.lane);
    let after = traffic.gap_view_of(vehicle, target);
    if after.leader_id.is_some() && after.net_gap <= 0.0 {
        return None;
    }
    if after.follower_id.is_some() && after.follower_gap <= 0.0 {
        return None;
    }

    let own_before = accel_behind(vehicle, lane_leader(&current, vehicle.lane, vehicle.position, network));
    let own_after = accel_behind(vehicle, lane_leader(&after, target, vehicle.position, network));
    // Safety covers the changer too: no cutting in behind a leader that
    // would force a hard brake.
    if own_after < -params.safe_decel {
        return None;
    }

    let mut others = 0.0;
    if let Some(nf) = after.follower_id.and_then(|id| traffic.vehicle(id)) {
        let nf_view = traffic.gap_view_of(nf, target);
        let before = accel_behind(nf, lane_leader(&nf_view, target, nf.position, network));
        let after_change = accel_behind(nf, Some(Leader { gap: after.follower_gap, speed: vehicle.speed }));
        if after_change < -params.safe_decel {
            return None;
        }
        others += after_change - before;
    }
    if let Some(of) = current.follower_id.and_then(|id| traffic.vehicle(id)) {
        let before = accel_behind(of, Some(Leader { gap: current.follower_gap, speed: vehicle.speed }));
        let new_leader = current.leader_id.map(|_| Leader {
            gap: current.net_gap + vehicle.class.length + current.follower_gap,
            speed: current.leader_speed,
        });
        let after_change = accel_behind(of, new_leader);
        others += after_change - before;
    }
    Some(own_after - own_before + params.politeness * others)
}

/// Incentive-based lane-change decision: safe, and incentive strictly
/// above the changing threshold.
pub fn lane_change_decision(
    vehicle: &Vehicle,
    target: Lane,
    traffic: &Snapshot<'_>,
    network: &RoadNetwork,
    params: &LaneChangeParams,
) -> LaneChange {
    lane_change_decision_with_bonus(vehicle, target, traffic, network, params, 0.0)
}

/// As [`lane_change_decision`] with `bonus` added to the incentive. Used
/// for mandatory changes (diversions, ramp merges), which still respect the
/// safety veto.
pub fn lane_change_decision_with_bonus(
    vehicle: &Vehicle,
    target: Lane,
    traffic: &Snapshot<'_>,
    network: &RoadNetwork,
    params: &LaneChangeParams,
    bonus: f64,
) -> LaneChange {
    match lane_change_incentive(vehicle, target, traffic, network, params) {
        Some(incentive) if incentive + bonus > params.changing_threshold => LaneChange::Change,
        _ => LaneChange::Stay,
    }
}

/// Semi-implicit Euler step: speed first (clamped to `[0, min(v0, limit)]`),
/// then position with the new speed. Blocked vehicles do not move.
pub fn step_kinematics(vehicle: &mut Vehicle, accel: f64, dt: f64) {
    if vehicle.is_blocked() {
        vehicle.speed = 0.0;
        vehicle.accel = 0.0;
        return;
    }
    let top = vehicle.driving.target_speed();
    vehicle.speed = (vehicle.speed + accel * dt).clamp(0.0, top);
    vehicle.position += vehicle.speed * dt;
    vehicle.accel = accel;
}

/// Stops a vehicle in place. Returns `false` (and changes nothing) when it
/// was already blocked.
pub fn apply_blockage(vehicle: &mut Vehicle) -> bool {
    if vehicle.is_blocked() {
        log::info!("{} is already blocked", vehicle.id);
        return false;
    }
    vehicle.status = VehicleStatus::Blocked;
    vehicle.speed = 0.0;
    vehicle.accel = 0.0;
    true
}

#[cfg(test)]
pub(crate) fn test_vehicle(id: u64, kind: VehicleKind, lane: crate::road::LaneId, position: f64, speed: f64) -> Vehicle {
    let (class, driving) = match kind {
        VehicleKind::Car => (VehicleClass::car(), DrivingParams::car()),
        VehicleKind::Truck => (VehicleClass::truck(), DrivingParams::truck()),
    };
    Vehicle::new(VehicleId(id), class, driving, Lane::Main(lane), position, speed)
}
