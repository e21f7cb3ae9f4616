//! The tick loop.
//!
//! Tick `k` advances the world to time `k * dt` in seven phases, always in
//! this order:
//!
//! 1. due accidents block a vehicle (and, with the protocol on, make it the
//!    affected broadcaster);
//! 2. transmissions emitted during the previous tick are delivered;
//! 3. protocol handlers run on every inbox, then vehicles and roadside
//!    units emit this tick's transmissions;
//! 4. lane changes: mandatory ones (diversions, ramp merges) first, then
//!    incentive-based ones, each in vehicle id order;
//! 5. car following and kinematic integration;
//! 6. despawns (road end, cleared incidents) and spawns;
//! 7. the metrics record.
//!
//! A message emitted at tick `k` is therefore first receivable at `k + 1`.

use std::fmt::Write as _;
use std::mem;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::comms::{deliver, NodeId, Rsu, Transmission};
use crate::config::{AccidentEvent, ScenarioConfig};
use crate::dynamics::{
    accel_behind, apply_blockage, following_accel, lane_change_decision_with_bonus, lane_change_incentive,
    lane_leader, step_kinematics, Leader, DrivingParams, LaneChange, Vehicle, VehicleClass, VehicleId, VehicleKind, VehicleStatus,
};
use crate::error::{Error, Result};
use crate::metrics::{EventKind, EventLog, EventLogEntry, MetricsRecord, MetricsSeries};
use crate::protocol::{
    broadcast_tick, on_accident, on_lane_change_complete, on_receive, pending_diversion, refresh_advisory,
    rsu_broadcast_tick, rsu_on_receive, Action, LocalView, MessageId, ProtocolMode, RsuState,
};
use crate::road::{adjacent_lanes, build_network, Direction, Lane, LaneId, RoadNetwork, Snapshot};

/// How far upstream of an accident position a vehicle may be picked.
const ACCIDENT_REACH: f64 = 100.0;
/// Below this speed a vehicle closing on a stopped leader comes to rest.
const STOP_SNAP_SPEED: f64 = 1.0;
/// Minimum bumper gap kept by the kinematic position cap.
const CLEARANCE: f64 = 0.1;
/// Lane changes farther apart than this cannot affect each other's
/// decision within one tick.
const INTERACTION_RANGE: f64 = 300.0;
/// How far behind a merging vehicle drivers give way to it.
const YIELD_RANGE: f64 = 100.0;

const PHASE_ACCIDENT: u8 = 1;
const PHASE_PROTOCOL: u8 = 3;
const PHASE_LANE_CHANGE: u8 = 4;
const PHASE_POPULATION: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub ticks: u64,
    pub final_congested: usize,
    /// Vehicles blocked by accidents at the end of the run.
    pub blocked: usize,
    /// Longest time any vehicle not blocked by an accident spent at zero
    /// speed after warm-up, in seconds.
    pub max_queue_standstill: f64,
    pub diversions: u64,
    pub messages_total: u64,
    pub vehicle_messages: u64,
    pub rsu_messages: u64,
    pub spawned: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub series: MetricsSeries,
    pub log: EventLog,
    pub summary: RunSummary,
    pub config_echo: String,
    pub world_final: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AccidentState {
    Pending,
    Active { vehicle: VehicleId, message: Option<MessageId>, clear_tick: Option<u64> },
    Done,
}

#[derive(Debug, Clone)]
struct ScheduledAccident {
    event: AccidentEvent,
    fire_tick: u64,
    state: AccidentState,
}

#[derive(Debug, Clone, Copy)]
struct Origin {
    lane: Lane,
    start: f64,
    /// Arrival probability per tick.
    probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ChangeKind {
    Diversion,
    Merge,
    Discretionary,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    id: VehicleId,
    target: Lane,
    kind: ChangeKind,
}

pub struct Simulation {
    config: ScenarioConfig,
    network: RoadNetwork,
    tick: u64,
    vehicles: Vec<Vehicle>,
    rsus: Vec<RsuState>,
    pending: Vec<Transmission>,
    traffic_rng: ChaCha8Rng,
    comms_rng: ChaCha8Rng,
    origins: Vec<Origin>,
    accidents: Vec<ScheduledAccident>,
    next_vehicle: u64,
    next_message: u64,
    diversions: u64,
    vehicle_messages: u64,
    rsu_messages: u64,
    spawned: u64,
    max_queue_standstill_ticks: u64,
    series: MetricsSeries,
    log: EventLog,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Simulation> {
        let network = build_network(&config)?;
        let per_tick = |veh_per_hour: f64| (veh_per_hour * config.dt / 3600.0).min(1.0);
        let mut origins: Vec<Origin> = network
            .lanes()
            .into_iter()
            .map(|l| Origin { lane: Lane::Main(l), start: 0.0, probability: per_tick(config.main_inflow) })
            .collect();
        if let Some(ramp) = network.ramp {
            origins.push(Origin { lane: Lane::Ramp, start: ramp.start(), probability: per_tick(config.ramp_inflow) });
        }
        let accidents = config
            .accidents
            .iter()
            .map(|&event| ScheduledAccident {
                event,
                fire_tick: ((event.time / config.dt - 1e-9).ceil() as u64).max(1),
                state: AccidentState::Pending,
            })
            .collect();
        let mut traffic_rng = ChaCha8Rng::seed_from_u64(config.seed);
        traffic_rng.set_stream(0);
        let mut comms_rng = ChaCha8Rng::seed_from_u64(config.seed);
        comms_rng.set_stream(1);
        Ok(Simulation {
            rsus: config.rsus.iter().copied().map(RsuState::new).collect(),
            network,
            tick: 0,
            vehicles: Vec::new(),
            pending: Vec::new(),
            traffic_rng,
            comms_rng,
            origins,
            accidents,
            next_vehicle: 1,
            next_message: 1,
            diversions: 0,
            vehicle_messages: 0,
            rsu_messages: 0,
            spawned: 0,
            max_queue_standstill_ticks: 0,
            series: MetricsSeries::default(),
            log: EventLog::default(),
            config,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.network
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    /// Vehicles in id order.
    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&Vehicle> {
        self.index_of(id).map(|i| &self.vehicles[i])
    }

    pub fn rsus(&self) -> &[RsuState] {
        &self.rsus
    }

    /// Transmissions emitted during the last tick, to be delivered next.
    pub fn in_flight(&self) -> &[Transmission] {
        &self.pending
    }

    pub fn series(&self) -> &MetricsSeries {
        &self.series
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.config.ticks()
    }

    /// Places a vehicle directly, bypassing the spawn rules. Meant for
    /// hand-built worlds; the no-overlap invariant is checked on the next
    /// tick.
    pub fn add_vehicle(&mut self, kind: VehicleKind, lane: Lane, position: f64, speed: f64) -> VehicleId {
        let (class, driving) = self.class_of(kind);
        let id = self.fresh_id();
        let speed = speed.clamp(0.0, driving.target_speed());
        self.vehicles.push(Vehicle::new(id, class, driving, lane, position, speed));
        id
    }

    fn class_of(&self, kind: VehicleKind) -> (VehicleClass, DrivingParams) {
        match kind {
            VehicleKind::Car => (self.config.car, self.config.car_driving),
            VehicleKind::Truck => (self.config.truck, self.config.truck_driving),
        }
    }

    fn fresh_id(&mut self) -> VehicleId {
        let id = VehicleId(self.next_vehicle);
        self.next_vehicle += 1;
        id
    }

    fn index_of(&self, id: VehicleId) -> Option<usize> {
        self.vehicles.binary_search_by_key(&id, |v| v.id).ok()
    }

    fn axis(&self, v: &Vehicle) -> f64 {
        self.network.axis_position(v.lane.direction(), v.position)
    }

    fn event(&mut self, phase: u8, kind: EventKind, subject: NodeId, message_id: Option<MessageId>, detail: String) {
        let time = self.time();
        self.log.push(EventLogEntry { time, phase, kind, subject, message_id, detail });
    }

    /// Advances one tick.
    pub fn step(&mut self) -> Result<()> {
        self.tick += 1;
        let log_start = self.log.entries.len();
        self.inject_accidents();
        let sent = if self.config.cdca_enabled { self.protocol_phase()? } else { 0 };
        self.lane_change_phase();
        self.dynamics_phase();
        self.population_phase();
        self.record(sent);
        self.log.settle_from(log_start);
        self.check_invariants()
    }

    /// Runs the remaining ticks and returns the results.
    pub fn run_to_end(mut self) -> Result<RunOutput> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> RunOutput {
        let summary = self.summary();
        RunOutput {
            config_echo: self.config.to_toml(),
            world_final: self.world_csv(),
            series: self.series,
            log: self.log,
            summary,
        }
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            ticks: self.tick,
            final_congested: self.series.last().map_or(0, |r| r.congested_vehicles),
            blocked: self.vehicles.iter().filter(|v| v.is_blocked()).count(),
            max_queue_standstill: self.max_queue_standstill_ticks as f64 * self.config.dt,
            diversions: self.diversions,
            messages_total: self.vehicle_messages + self.rsu_messages,
            vehicle_messages: self.vehicle_messages,
            rsu_messages: self.rsu_messages,
            spawned: self.spawned,
        }
    }

    /// One line per vehicle: id, kind, lane, position, speed, accel,
    /// status, protocol mode.
    pub fn world_csv(&self) -> String {
        let mut out = String::from("id,kind,lane,position,speed,accel,status,mode\n");
        for v in &self.vehicles {
            let status = match v.status {
                VehicleStatus::Active => "active",
                VehicleStatus::Blocked => "blocked",
                VehicleStatus::Diverting => "diverting",
            };
            let _ = writeln!(
                out,
                "{},{},{},{:.3},{:.3},{:.3},{},{}",
                v.id, v.class.kind, v.lane, v.position, v.speed, v.accel, status, v.protocol.mode
            );
        }
        out
    }

    // Phase 1.
    fn inject_accidents(&mut self) {
        for i in 0..self.accidents.len() {
            let acc = &self.accidents[i];
            if acc.state != AccidentState::Pending || acc.fire_tick != self.tick {
                continue;
            }
            let event = acc.event;
            let state = match self.bind_accident(&event) {
                Some(id) => {
                    let clear_tick = event.clear_after.map(|c| self.tick + (c / self.config.dt).round().max(1.0) as u64);
                    let message = self.block(id, &event);
                    AccidentState::Active { vehicle: id, message, clear_tick }
                }
                None => {
                    log::warn!("accident at {} {:.1} m found nothing to block", event.lane, event.position);
                    AccidentState::Done
                }
            };
            self.accidents[i].state = state;
        }
    }

    /// Picks (or creates) the vehicle an accident stops.
    fn bind_accident(&mut self, event: &AccidentEvent) -> Option<VehicleId> {
        let lane = Lane::Main(event.lane);
        let in_lane = || self.vehicles.iter().filter(move |v| v.lane == lane && !v.is_blocked());
        let upstream = |reach: f64| {
            in_lane()
                .filter(|v| v.position <= event.position && v.position >= event.position - reach)
                .max_by(|a, b| a.position.total_cmp(&b.position).then(b.id.cmp(&a.id)))
                .map(|v| v.id)
        };
        if let Some(id) = upstream(ACCIDENT_REACH) {
            return Some(id);
        }
        // A vehicle straddling the spot would overlap a stalled car put there.
        let footprint = self.config.car.length + self.config.car_driving.min_gap;
        let straddling = in_lane()
            .filter(|v| v.position > event.position && v.rear() < event.position + footprint)
            .min_by(|a, b| a.position.total_cmp(&b.position))
            .map(|v| v.id);
        if straddling.is_some() {
            return straddling;
        }
        if self.vehicles.len() < self.config.vehicle_count {
            let id = self.add_vehicle(VehicleKind::Car, lane, event.position, 0.0);
            self.spawned += 1;
            self.event(
                PHASE_ACCIDENT,
                EventKind::Spawn,
                NodeId::Vehicle(id),
                None,
                format!("stalled car {} {:.3}", event.lane, event.position),
            );
            return Some(id);
        }
        upstream(f64::INFINITY)
    }

    fn block(&mut self, id: VehicleId, event: &AccidentEvent) -> Option<MessageId> {
        let idx = self.index_of(id)?;
        let v = &mut self.vehicles[idx];
        if !apply_blockage(v) {
            return None;
        }
        v.protocol.planned_target_lane = None;
        let position = v.position;
        let mut message = None;
        if self.config.cdca_enabled {
            let mid = MessageId(self.next_message);
            if on_accident(v, mid, self.tick).is_some() {
                self.next_message += 1;
                message = Some(mid);
            }
        }
        self.event(
            PHASE_ACCIDENT,
            EventKind::Accident,
            NodeId::Vehicle(id),
            message,
            format!("{} {:.3} requested {:.3}", event.lane, position, event.position),
        );
        message
    }

    fn local_view(&self, v: &Vehicle, snap: &Snapshot<'_>) -> LocalView {
        let neighbour_gaps = match v.lane {
            Lane::Main(l) => adjacent_lanes(l)
                .into_iter()
                .map(|a| (a, snap.gap_view_of(v, Lane::Main(a)).net_gap))
                .collect(),
            Lane::Ramp => Vec::new(),
        };
        LocalView { id: v.id, lane: v.lane, position: v.position, blocked: v.is_blocked(), neighbour_gaps }
    }

    // Phases 2 and 3. Returns the number of transmissions emitted.
    fn protocol_phase(&mut self) -> Result<u64> {
        let params = self.config.protocol;
        let positions: Vec<(VehicleId, f64)> = self.vehicles.iter().map(|v| (v.id, self.axis(v))).collect();
        let rsu_list: Vec<Rsu> = self.rsus.iter().map(|r| r.rsu).collect();
        let arriving = mem::take(&mut self.pending);
        let inboxes = deliver(&arriving, &positions, &rsu_list, &self.config.channel, &mut self.comms_rng);

        let views: Vec<Option<LocalView>> = {
            let snap = Snapshot::new(&self.vehicles);
            self.vehicles
                .iter()
                .map(|v| {
                    let involved = !v.protocol.known.is_empty() || inboxes.contains_key(&NodeId::Vehicle(v.id));
                    involved.then(|| self.local_view(v, &snap))
                })
                .collect()
        };

        for (node, inbox) in &inboxes {
            match *node {
                NodeId::Vehicle(id) => {
                    let Some(idx) = self.index_of(id) else { continue };
                    let Some(view) = &views[idx] else { continue };
                    for msg in &inbox.messages {
                        let v = &mut self.vehicles[idx];
                        match on_receive(&mut v.protocol, view, msg, &params) {
                            Ok(r) => {
                                if matches!(r.action, Action::Divert(_)) && !v.is_blocked() {
                                    v.status = VehicleStatus::Diverting;
                                }
                                if r.first_copy {
                                    self.event(PHASE_PROTOCOL, EventKind::Receive, *node, Some(msg.message_id), msg.canonical());
                                }
                            }
                            Err(e) => log::warn!("{id} dropped a message: {e}"),
                        }
                    }
                }
                NodeId::Rsu(rid) => {
                    let Some(idx) = self.rsus.iter().position(|r| r.rsu.id == rid) else { continue };
                    for msg in &inbox.messages {
                        if rsu_on_receive(&mut self.rsus[idx], msg, &params) {
                            self.event(PHASE_PROTOCOL, EventKind::Receive, *node, Some(msg.message_id), msg.canonical());
                        }
                    }
                }
            }
        }

        for (v, view) in self.vehicles.iter_mut().zip(&views) {
            let Some(view) = view else { continue };
            if pending_diversion(&mut v.protocol, view, &params).is_some() && !v.is_blocked() {
                v.status = VehicleStatus::Diverting;
            }
            refresh_advisory(&mut v.protocol, view);
        }

        let mut emitted = Vec::new();
        for i in 0..self.vehicles.len() {
            let axis = self.axis(&self.vehicles[i]);
            let v = &mut self.vehicles[i];
            let was_ceased = v.protocol.mode == ProtocolMode::Ceased;
            let out = broadcast_tick(&mut v.protocol, v.id, axis, self.tick, &params);
            if was_ceased && !out.is_empty() {
                return Err(self.breach(format!("{} transmitted after ceasing", self.vehicles[i].id)));
            }
            emitted.extend(out);
        }
        let from_vehicles = emitted.len();
        for rsu in &mut self.rsus {
            emitted.extend(rsu_broadcast_tick(rsu, self.tick, &params));
        }
        for t in &emitted {
            self.event(PHASE_PROTOCOL, EventKind::Broadcast, t.source, Some(t.message.message_id), t.message.canonical());
        }
        self.vehicle_messages += from_vehicles as u64;
        self.rsu_messages += (emitted.len() - from_vehicles) as u64;
        let sent = emitted.len() as u64;
        self.pending = emitted;
        Ok(sent)
    }

    // Phase 4.
    fn lane_change_phase(&mut self) {
        let lc = self.config.lane_change;
        let params = self.config.protocol;
        let bonus = self.config.mandatory_bonus;
        let cooldown = (self.config.lane_change_cooldown / self.config.dt).round() as u64;

        let mut forced = Vec::new();
        let mut optional = Vec::new();
        let mut reached = Vec::new();
        let mut stale = Vec::new();
        {
            let snap = Snapshot::new(&self.vehicles);
            let mandatory_ok = |v: &Vehicle, target: Lane, snap: &Snapshot<'_>| {
                lane_change_decision_with_bonus(v, target, snap, &self.network, &lc, bonus) == LaneChange::Change
            };
            for v in &self.vehicles {
                if v.is_blocked() {
                    continue;
                }
                let lane = match v.lane {
                    Lane::Ramp => {
                        if let Some(t) = self.network.merge_target_at(v.position) {
                            if mandatory_ok(v, Lane::Main(t), &snap) {
                                forced.push(Candidate { id: v.id, target: Lane::Main(t), kind: ChangeKind::Merge });
                            }
                        }
                        continue;
                    }
                    Lane::Main(l) => l,
                };
                if let Some(target) = v.protocol.planned_target_lane {
                    if target == lane {
                        reached.push(v.id);
                    } else if adjacent_lanes(lane).contains(&target) {
                        if mandatory_ok(v, Lane::Main(target), &snap) {
                            forced.push(Candidate { id: v.id, target: Lane::Main(target), kind: ChangeKind::Diversion });
                        }
                    } else {
                        stale.push(v.id);
                    }
                    continue;
                }
                if v.last_lane_change.is_some_and(|t| self.tick < t + cooldown) {
                    continue;
                }
                // A stopped leader may be a queue or an obstruction; without
                // warning information the driver waits.
                let current = snap.gap_view_of(v, v.lane);
                if current.leader_id.is_some() && current.leader_speed == 0.0 {
                    continue;
                }
                let avoid = if self.config.cdca_enabled {
                    v.protocol.blocked_lanes_ahead(lane.direction, v.position, params.lookahead)
                } else {
                    Vec::new()
                };
                let best = adjacent_lanes(lane)
                    .into_iter()
                    .filter(|a| !avoid.contains(a))
                    .filter_map(|a| {
                        lane_change_incentive(v, Lane::Main(a), &snap, &self.network, &lc)
                            .filter(|x| *x > lc.changing_threshold)
                            .map(|x| (a, x))
                    })
                    .fold(None, |best: Option<(LaneId, f64)>, (a, x)| match best {
                        Some((_, bx)) if bx >= x => best,
                        _ => Some((a, x)),
                    });
                if let Some((a, _)) = best {
                    optional.push(Candidate { id: v.id, target: Lane::Main(a), kind: ChangeKind::Discretionary });
                }
            }
        }

        for id in stale {
            if let Some(i) = self.index_of(id) {
                self.vehicles[i].protocol.planned_target_lane = None;
                self.vehicles[i].status = VehicleStatus::Active;
            }
        }
        for id in reached {
            let Some(i) = self.index_of(id) else { continue };
            self.vehicles[i].status = VehicleStatus::Active;
            if on_lane_change_complete(&mut self.vehicles[i].protocol, &params) {
                self.event(PHASE_LANE_CHANGE, EventKind::Cessation, NodeId::Vehicle(id), None, "left blocked lane".into());
            }
        }

        let mut applied: Vec<(Direction, f64)> = Vec::new();
        for c in forced.into_iter().chain(optional) {
            let Some(idx) = self.index_of(c.id) else { continue };
            let v = &self.vehicles[idx];
            let dir = v.lane.direction();
            let near = applied.iter().any(|&(d, x)| d == dir && (x - v.position).abs() <= INTERACTION_RANGE);
            if near {
                let snap = Snapshot::new(&self.vehicles);
                let still = match c.kind {
                    ChangeKind::Discretionary => lane_change_incentive(v, c.target, &snap, &self.network, &lc)
                        .is_some_and(|x| x > lc.changing_threshold),
                    _ => {
                        lane_change_decision_with_bonus(v, c.target, &snap, &self.network, &lc, bonus)
                            == LaneChange::Change
                    }
                };
                if !still {
                    continue;
                }
            }
            applied.push((dir, v.position));
            self.apply_change(idx, c);
        }
    }

    fn apply_change(&mut self, idx: usize, c: Candidate) {
        let params = self.config.protocol;
        let tick = self.tick;
        let v = &mut self.vehicles[idx];
        let from = v.lane;
        v.lane = c.target;
        v.last_lane_change = Some(tick);
        if c.kind != ChangeKind::Diversion {
            return;
        }
        v.status = VehicleStatus::Active;
        let message = v
            .protocol
            .known
            .values()
            .find(|m| Lane::Main(m.blocked_lane) == from)
            .map(|m| m.message_id);
        let ceased = on_lane_change_complete(&mut v.protocol, &params);
        let id = v.id;
        self.diversions += 1;
        self.event(PHASE_LANE_CHANGE, EventKind::Diversion, NodeId::Vehicle(id), message, format!("{from}->{}", c.target));
        if ceased {
            self.event(PHASE_LANE_CHANGE, EventKind::Cessation, NodeId::Vehicle(id), message, "diverted".into());
        }
    }

    // Phase 5.
    /// Lane a vehicle must move into: its planned diversion, or lane 3 for
    /// a ramp vehicle inside the merge section.
    fn mandatory_target(&self, v: &Vehicle) -> Option<LaneId> {
        if v.is_blocked() {
            return None;
        }
        match v.lane {
            Lane::Ramp => self.network.merge_target_at(v.position),
            Lane::Main(l) => v.protocol.planned_target_lane.filter(|t| adjacent_lanes(l).contains(t)),
        }
    }

    fn dynamics_phase(&mut self) {
        let dt = self.config.dt;
        let mergers: Vec<(LaneId, &Vehicle)> =
            self.vehicles.iter().filter_map(|v| self.mandatory_target(v).map(|t| (t, v))).collect();
        let moves: Vec<(f64, f64)> = {
            let snap = Snapshot::new(&self.vehicles);
            self.vehicles
                .iter()
                .map(|v| {
                    if v.is_blocked() {
                        return (0.0, f64::INFINITY);
                    }
                    let comfortable = -v.driving.comfortable_decel;
                    let view = snap.gap_view_of(v, v.lane);
                    let leader = lane_leader(&view, v.lane, v.position, &self.network);
                    let mut a = accel_behind(v, leader);

                    // A vehicle that has to change lane matches the speed of
                    // the vehicle it will merge behind, when that is cheap.
                    if let Some(target) = self.mandatory_target(v) {
                        let tv = snap.gap_view_of(v, Lane::Main(target));
                        if tv.leader_id.is_some() && tv.net_gap > 0.0 {
                            let sync = accel_behind(v, Some(Leader { gap: tv.net_gap, speed: tv.leader_speed }));
                            if sync >= comfortable {
                                a = a.min(sync);
                            }
                        }
                    }
                    // Vehicles in the target lane let a merger just ahead in,
                    // again only at comfortable deceleration.
                    if let Lane::Main(own) = v.lane {
                        let nearest = mergers
                            .iter()
                            .filter(|(t, m)| *t == own && m.id != v.id)
                            .map(|(_, m)| (m.rear() - v.position, m.speed))
                            .filter(|(gap, _)| *gap > 0.0 && *gap <= YIELD_RANGE)
                            .min_by(|x, y| x.0.total_cmp(&y.0));
                        if let Some((gap, speed)) = nearest {
                            let give_way = accel_behind(v, Some(Leader { gap, speed }));
                            if give_way >= comfortable {
                                a = a.min(give_way);
                            }
                        }
                    }

                    let mut cap = f64::INFINITY;
                    if let Some(l) = leader {
                        cap = v.position + l.gap - CLEARANCE;
                        let hold = v.driving.min_gap + self.config.restart_gap;
                        if l.speed == 0.0 && l.gap <= hold {
                            if v.speed == 0.0 {
                                a = a.min(0.0);
                            } else if v.speed <= STOP_SNAP_SPEED {
                                a = a.min(-v.speed / dt);
                            }
                        }
                    }
                    (a, cap)
                })
                .collect()
        };

        let warm = self.time() > self.config.warmup;
        for (v, (a, cap)) in self.vehicles.iter_mut().zip(moves) {
            let old = v.position;
            step_kinematics(v, a, dt);
            if v.position > cap {
                let capped = cap.max(old);
                v.speed = (capped - old) / dt;
                v.position = capped;
            }
            if v.speed == 0.0 {
                v.stopped_ticks += 1;
                if warm && !v.is_blocked() {
                    self.max_queue_standstill_ticks = self.max_queue_standstill_ticks.max(v.stopped_ticks);
                }
            } else {
                v.stopped_ticks = 0;
            }
        }
    }

    // Phase 6.
    fn population_phase(&mut self) {
        for i in 0..self.accidents.len() {
            if let AccidentState::Active { vehicle, message, clear_tick: Some(t) } = self.accidents[i].state {
                if t == self.tick {
                    self.clear_incident(vehicle, message);
                    self.accidents[i].state = AccidentState::Done;
                }
            }
        }

        let end = self.network.main_length;
        let exiting: Vec<VehicleId> =
            self.vehicles.iter().filter(|v| v.lane != Lane::Ramp && v.position >= end).map(|v| v.id).collect();
        for id in exiting {
            self.remove(id, "exit");
        }

        for o in 0..self.origins.len() {
            let origin = self.origins[o];
            // Two draws per origin per tick whatever happens, so the arrival
            // stream does not depend on the rest of the simulation.
            let arrival: f64 = self.traffic_rng.random();
            let kind_draw: f64 = self.traffic_rng.random();
            if arrival >= origin.probability || self.vehicles.len() >= self.config.vehicle_count {
                continue;
            }
            let kind = if kind_draw < self.config.truck_share { VehicleKind::Truck } else { VehicleKind::Car };
            self.try_spawn(origin, kind);
        }
    }

    fn try_spawn(&mut self, origin: Origin, kind: VehicleKind) {
        let (class, driving) = self.class_of(kind);
        let position = origin.start + class.length;
        let leader = self
            .vehicles
            .iter()
            .filter(|v| v.lane == origin.lane)
            .min_by(|a, b| a.position.total_cmp(&b.position).then(a.id.cmp(&b.id)));
        let mut gap = f64::INFINITY;
        let mut leader_speed = 0.0;
        if let Some(l) = leader {
            gap = l.rear() - position;
            leader_speed = l.speed;
        }
        if origin.lane == Lane::Ramp {
            let to_end = self.network.lane_end(Lane::Ramp) - position;
            if to_end < gap {
                gap = to_end;
                leader_speed = 0.0;
            }
        }
        let top = driving.target_speed();
        let speed = [top, leader_speed.min(top)].into_iter().find(|&s| {
            following_accel(s, gap, s - leader_speed, &driving).is_ok_and(|a| a >= -driving.comfortable_decel)
        });
        let Some(speed) = speed else {
            log::trace!("spawn suppressed on {}", origin.lane);
            return;
        };
        let id = self.fresh_id();
        self.vehicles.push(Vehicle::new(id, class, driving, origin.lane, position, speed));
        self.spawned += 1;
        self.event(PHASE_POPULATION, EventKind::Spawn, NodeId::Vehicle(id), None, format!("{kind} {} {speed:.3}", origin.lane));
    }

    fn remove(&mut self, id: VehicleId, why: &str) {
        if let Some(i) = self.index_of(id) {
            let v = self.vehicles.remove(i);
            self.event(PHASE_POPULATION, EventKind::Despawn, NodeId::Vehicle(id), None, format!("{why} {} {:.3}", v.lane, v.position));
        }
    }

    fn clear_incident(&mut self, vehicle: VehicleId, message: Option<MessageId>) {
        self.remove(vehicle, "cleared");
        if let Some(m) = message {
            for v in &mut self.vehicles {
                v.protocol.forget(m);
            }
            for r in &mut self.rsus {
                r.clear(m);
            }
        }
    }

    // Phase 7.
    fn record(&mut self, sent: u64) {
        let threshold = self.config.congestion_threshold;
        let mut congested = 0;
        let mut per_lane = [0usize; 3];
        let mut speed_sum = 0.0;
        for v in &self.vehicles {
            speed_sum += v.speed;
            if v.speed > threshold || (v.is_blocked() && !self.config.count_blocked) {
                continue;
            }
            congested += 1;
            if let Lane::Main(l) = v.lane {
                per_lane[usize::from(l.index - 1)] += 1;
            }
        }
        let active = self.vehicles.len();
        let previous = self.series.last().map_or(0, |r| r.messages_cumulative);
        self.series.push(MetricsRecord {
            time: self.time(),
            active_vehicles: active,
            congested_vehicles: congested,
            per_lane_congested: per_lane,
            mean_speed: if active == 0 { 0.0 } else { speed_sum / active as f64 },
            messages_sent_this_tick: sent,
            messages_cumulative: previous + sent,
            diversions_cumulative: self.diversions,
        });
    }

    fn breach(&self, detail: String) -> Error {
        Error::InvariantBreach { tick: self.tick, detail, dump: self.world_csv() }
    }

    fn check_invariants(&self) -> Result<()> {
        if self.vehicles.len() > self.config.vehicle_count {
            return Err(self.breach(format!(
                "population {} exceeds {}",
                self.vehicles.len(),
                self.config.vehicle_count
            )));
        }
        for v in &self.vehicles {
            let top = v.driving.target_speed();
            if !(v.speed >= 0.0 && v.speed <= top + 1e-9) {
                return Err(self.breach(format!("{} speed {} outside [0, {top}]", v.id, v.speed)));
            }
            if v.is_blocked() && v.speed != 0.0 {
                return Err(self.breach(format!("blocked {} moving at {}", v.id, v.speed)));
            }
        }
        let snap = Snapshot::new(&self.vehicles);
        let mut lanes: Vec<Lane> = self.network.lanes().into_iter().map(Lane::Main).collect();
        lanes.push(Lane::Ramp);
        for lane in lanes {
            let ordered: Vec<&Vehicle> = snap.lane(lane).collect();
            for pair in ordered.windows(2) {
                let gap = pair[1].rear() - pair[0].position;
                if gap <= 0.0 {
                    return Err(self.breach(format!(
                        "collision in {lane}: {} and {} net gap {gap:.3}",
                        pair[0].id, pair[1].id
                    )));
                }
            }
        }
        if let Some(t) = self.pending.iter().find(|t| t.message.hop_count > self.config.protocol.max_hops) {
            return Err(self.breach(format!("{} relayed {} hops", t.message.message_id, t.message.hop_count)));
        }
        Ok(())
    }
}

/// Runs a scenario from start to finish.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput> {
    Simulation::new(config.clone())?.run_to_end()
}
