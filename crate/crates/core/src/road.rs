//! Highway geometry and neighbour queries.
//!
//! Positions along a carriageway are measured in the direction of travel:
//! a forward vehicle at `s` sits at axis coordinate `s`, a backward vehicle
//! at `main_length - s`. A vehicle's `position` is its front bumper; its
//! rear is `position - length`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::dynamics::{Vehicle, VehicleId};
use crate::error::{Error, Result};

pub const LANES_PER_DIRECTION: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn all(count: u8) -> &'static [Direction] {
        if count >= 2 {
            &[Direction::Forward, Direction::Backward]
        } else {
            &[Direction::Forward]
        }
    }
}

/// A main-carriageway lane. Index 1 is the upper lane, 2 the middle and 3
/// the lower lane, which the on-ramp feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LaneId {
    pub direction: Direction,
    pub index: u8,
}

impl LaneId {
    pub fn new(direction: Direction, index: u8) -> Option<LaneId> {
        let lane = LaneId { direction, index };
        lane.is_valid().then_some(lane)
    }

    /// Forward lane by index. Panics on an index outside 1..=3.
    pub fn fwd(index: u8) -> LaneId {
        LaneId::new(Direction::Forward, index).expect("lane index must be 1..=3")
    }

    pub fn is_valid(self) -> bool {
        (1..=LANES_PER_DIRECTION).contains(&self.index)
    }
}

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.direction {
            Direction::Forward => 'F',
            Direction::Backward => 'B',
        };
        write!(f, "{d}{}", self.index)
    }
}

/// Any lane a vehicle can occupy: a main lane or the on-ramp's
/// acceleration lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lane {
    Main(LaneId),
    Ramp,
}

impl Lane {
    pub fn direction(self) -> Direction {
        match self {
            Lane::Main(l) => l.direction,
            Lane::Ramp => Direction::Forward,
        }
    }

    pub fn main(self) -> Option<LaneId> {
        match self {
            Lane::Main(l) => Some(l),
            Lane::Ramp => None,
        }
    }
}

impl fmt::Display for Lane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lane::Main(l) => l.fmt(f),
            Lane::Ramp => f.write_str("R"),
        }
    }
}

/// Lanes reachable by one lane change within the same direction, ordered
/// by index.
pub fn adjacent_lanes(lane: LaneId) -> Vec<LaneId> {
    [lane.index.checked_sub(1), lane.index.checked_add(1)]
        .into_iter()
        .flatten()
        .filter_map(|i| LaneId::new(lane.direction, i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ramp {
    pub length: f64,
    /// Forward coordinate where the ramp ends and joins lane 3.
    pub merge_position: f64,
    /// Length of the final ramp stretch from which merging is allowed.
    pub merge_section: f64,
}

impl Ramp {
    pub fn start(&self) -> f64 {
        self.merge_position - self.length
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    pub main_length: f64,
    pub lanes_per_direction: u8,
    pub directions: u8,
    pub ramp: Option<Ramp>,
}

impl RoadNetwork {
    pub fn new(
        main_length: f64,
        lanes_per_direction: u8,
        directions: u8,
        ramp: Option<Ramp>,
    ) -> Result<RoadNetwork> {
        let mut problems = Vec::new();
        if !(main_length > 0.0 && main_length.is_finite()) {
            problems.push(format!("main_length must be positive, got {main_length}"));
        }
        if lanes_per_direction != LANES_PER_DIRECTION {
            problems.push(format!("lanes_per_direction must be 3, got {lanes_per_direction}"));
        }
        if !(1..=2).contains(&directions) {
            problems.push(format!("directions must be 1 or 2, got {directions}"));
        }
        if let Some(r) = ramp {
            if !(r.length > 0.0) {
                problems.push(format!("ramp_length must be positive, got {}", r.length));
            }
            if !(r.merge_position > 0.0 && r.merge_position < main_length) {
                problems.push(format!(
                    "merge_position must lie inside (0, {main_length}), got {}",
                    r.merge_position
                ));
            }
            if r.start() < 0.0 {
                problems.push(format!(
                    "ramp of length {} does not fit before merge_position {}",
                    r.length, r.merge_position
                ));
            }
            if !(r.merge_section > 0.0 && r.merge_section <= r.length) {
                problems.push(format!(
                    "merge_section must lie in (0, ramp_length], got {}",
                    r.merge_section
                ));
            }
        }
        if problems.is_empty() {
            Ok(RoadNetwork { main_length, lanes_per_direction, directions, ramp })
        } else {
            Err(Error::InvalidGeometry(problems.join("; ")))
        }
    }

    pub fn lanes(&self) -> Vec<LaneId> {
        Direction::all(self.directions)
            .iter()
            .flat_map(|&d| (1..=self.lanes_per_direction).filter_map(move |i| LaneId::new(d, i)))
            .collect()
    }

    /// Main lane the ramp feeds when a ramp vehicle sits at forward
    /// coordinate `s`, if merging is allowed there.
    pub fn merge_target_at(&self, s: f64) -> Option<LaneId> {
        let r = self.ramp?;
        (s >= r.merge_position - r.merge_section && s <= r.merge_position).then(|| LaneId::fwd(3))
    }

    /// Lanes reachable from `lane` at coordinate `s`.
    pub fn adjacent_at(&self, lane: Lane, s: f64) -> Vec<Lane> {
        match lane {
            Lane::Main(l) => adjacent_lanes(l).into_iter().map(Lane::Main).collect(),
            Lane::Ramp => self.merge_target_at(s).map(Lane::Main).into_iter().collect(),
        }
    }

    /// Coordinate along the main axis (forward frame) of a point at `s` in
    /// `direction`'s frame.
    pub fn axis_position(&self, direction: Direction, s: f64) -> f64 {
        match direction {
            Direction::Forward => s,
            Direction::Backward => self.main_length - s,
        }
    }

    /// Where vehicles in `lane` leave it: road end, or the ramp end.
    pub fn lane_end(&self, lane: Lane) -> f64 {
        match (lane, self.ramp) {
            (Lane::Ramp, Some(r)) => r.merge_position,
            _ => self.main_length,
        }
    }

    pub fn contains_axis(&self, x: f64) -> bool {
        (0.0..=self.main_length).contains(&x)
    }
}

pub fn build_network(config: &ScenarioConfig) -> Result<RoadNetwork> {
    RoadNetwork::new(
        config.road.main_length,
        config.road.lanes_per_direction,
        config.road.directions,
        config.road.ramp,
    )
}

/// Nearest leader and follower of a vehicle in some lane. Gaps are
/// bumper-to-bumper and clamp to zero on overlap; a missing neighbour
/// reports an infinite gap and zero speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapView {
    pub leader_id: Option<VehicleId>,
    pub net_gap: f64,
    pub leader_speed: f64,
    pub follower_id: Option<VehicleId>,
    pub follower_gap: f64,
    pub follower_speed: f64,
}

impl GapView {
    pub const EMPTY: GapView = GapView {
        leader_id: None,
        net_gap: f64::INFINITY,
        leader_speed: 0.0,
        follower_id: None,
        follower_gap: f64::INFINITY,
        follower_speed: 0.0,
    };
}

fn order_key(v: &Vehicle) -> (f64, VehicleId) {
    (v.position, v.id)
}

fn cmp_key(a: (f64, VehicleId), b: (f64, VehicleId)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Read-only view over a set of vehicles with per-lane ordering, used for
/// all neighbour queries within one phase of a tick.
pub struct Snapshot<'a> {
    vehicles: &'a [Vehicle],
    by_id: HashMap<VehicleId, usize>,
    lanes: BTreeMap<Lane, Vec<usize>>,
}

impl<'a> Snapshot<'a> {
    pub fn new(vehicles: &'a [Vehicle]) -> Snapshot<'a> {
        let mut lanes: BTreeMap<Lane, Vec<usize>> = BTreeMap::new();
        let mut by_id = HashMap::with_capacity(vehicles.len());
        for (i, v) in vehicles.iter().enumerate() {
            by_id.insert(v.id, i);
            lanes.entry(v.lane).or_default().push(i);
        }
        for list in lanes.values_mut() {
            list.sort_by(|&a, &b| cmp_key(order_key(&vehicles[a]), order_key(&vehicles[b])));
        }
        Snapshot { vehicles, by_id, lanes }
    }

    pub fn vehicles(&self) -> &'a [Vehicle] {
        self.vehicles
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&'a Vehicle> {
        self.by_id.get(&id).map(|&i| &self.vehicles[i])
    }

    /// Vehicles in `lane`, upstream first.
    pub fn lane(&self, lane: Lane) -> impl Iterator<Item = &'a Vehicle> + '_ {
        self.lanes.get(&lane).into_iter().flatten().map(|&i| &self.vehicles[i])
    }

    pub fn gap_view(&self, id: VehicleId, target: Lane) -> Result<GapView> {
        let v = self.vehicle(id).ok_or(Error::UnknownVehicle(id))?;
        Ok(self.gap_view_of(v, target))
    }

    /// Neighbours of `subject` in `target`. The subject need not belong to
    /// this snapshot.
    pub fn gap_view_of(&self, subject: &Vehicle, target: Lane) -> GapView {
        let Some(list) = self.lanes.get(&target) else {
            return GapView::EMPTY;
        };
        let key = order_key(subject);
        let split = list.partition_point(|&i| cmp_key(order_key(&self.vehicles[i]), key) != Ordering::Greater);
        let leader = list[split..].first().map(|&i| &self.vehicles[i]);
        let follower = list[..split]
            .iter()
            .rev()
            .map(|&i| &self.vehicles[i])
            .find(|v| v.id != subject.id);

        let mut view = GapView::EMPTY;
        if let Some(l) = leader {
            view.leader_id = Some(l.id);
            view.net_gap = (l.rear() - subject.position).max(0.0);
            view.leader_speed = l.speed;
        }
        if let Some(f) = follower {
            view.follower_id = Some(f.id);
            view.follower_gap = (subject.rear() - f.position).max(0.0);
            view.follower_speed = f.speed;
        }
        view
    }
}
