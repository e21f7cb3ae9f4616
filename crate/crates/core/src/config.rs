//! Scenario files.
//!
//! A scenario is a TOML document. Top-level keys carry the basic
//! configuration (vehicle speeds, population, lanes, truck share,
//! lane-change parameters, speed limit) plus run controls; the `[road]`,
//! `[driving]`, `[traffic]` and `[comms]` tables hold model parameters and
//! `[[accident]]` entries script incidents. Every key is optional and
//! defaults to the reference configuration; unknown keys are rejected.
//!
//! | key                   | meaning                                   | default |
//! |-----------------------|-------------------------------------------|---------|
//! | `broadcast_pattern`   | only `"geobroadcast"`                     | geobroadcast |
//! | `vehicle_types`       | only `"truck & car"`                      | truck & car |
//! | `car_speed_kmh`       | car desired speed                         | 108 |
//! | `truck_speed_kmh`     | truck desired speed                       | 54 |
//! | `vehicle_count`       | population cap                            | 500 |
//! | `road_type`           | `"main+ramp"` or `"main"`                 | main+ramp |
//! | `lanes_per_direction` | must be 3                                 | 3 |
//! | `truck_share`         | probability a spawned vehicle is a truck  | 0.2 |
//! | `changing_threshold`  | lane-change threshold, m/s²               | 0.2 |
//! | `simulation_speed`    | echoed only, no effect                    | 10.0 |
//! | `speed_limit_kmh`     | imposed speed limit                       | 80 |
//! | `politeness`          | lane-change politeness factor             | 0.25 |
//!
//! The V2I coverage radius and tower spacing have no reference values;
//! the defaults in `[comms]` are modelling choices.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::comms::{Channel, Rsu, RsuId};
use crate::dynamics::{kmh_to_ms, DrivingParams, LaneChangeParams, VehicleClass, VehicleKind};
use crate::error::{Error, Result};
use crate::protocol::ProtocolParams;
use crate::road::{Direction, LaneId, Ramp, RoadNetwork};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub broadcast_pattern: String,
    pub vehicle_types: String,
    pub car_speed_kmh: f64,
    pub truck_speed_kmh: f64,
    pub vehicle_count: usize,
    pub road_type: String,
    pub lanes_per_direction: u8,
    pub truck_share: f64,
    pub changing_threshold: f64,
    pub simulation_speed: f64,
    pub speed_limit_kmh: f64,
    pub politeness: f64,

    pub seed: u64,
    pub dt: f64,
    pub duration: f64,
    pub warmup: f64,
    pub cdca_enabled: bool,
    pub cessation: bool,
    pub congestion_threshold: f64,
    pub count_blocked: bool,

    pub road: RoadSection,
    pub driving: DrivingSection,
    pub traffic: TrafficSection,
    pub comms: CommsSection,
    #[serde(rename = "accident", skip_serializing_if = "Vec::is_empty")]
    pub accidents: Vec<AccidentSpec>,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        ScenarioFile {
            broadcast_pattern: "geobroadcast".into(),
            vehicle_types: "truck & car".into(),
            car_speed_kmh: 108.0,
            truck_speed_kmh: 54.0,
            vehicle_count: 500,
            road_type: "main+ramp".into(),
            lanes_per_direction: 3,
            truck_share: 0.2,
            changing_threshold: 0.2,
            simulation_speed: 10.0,
            speed_limit_kmh: 80.0,
            politeness: 0.25,
            seed: 1,
            dt: 0.5,
            duration: 600.0,
            warmup: 60.0,
            cdca_enabled: true,
            cessation: true,
            congestion_threshold: 0.0,
            count_blocked: true,
            road: RoadSection::default(),
            driving: DrivingSection::default(),
            traffic: TrafficSection::default(),
            comms: CommsSection::default(),
            accidents: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadSection {
    pub main_length: f64,
    pub ramp_length: f64,
    pub merge_position: f64,
    pub merge_section: f64,
    pub directions: u8,
}

impl Default for RoadSection {
    fn default() -> Self {
        RoadSection {
            main_length: 10_000.0,
            ramp_length: 300.0,
            merge_position: 2_000.0,
            merge_section: 200.0,
            directions: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrivingSection {
    pub time_headway: f64,
    pub car_max_accel: f64,
    pub truck_max_accel: f64,
    pub comfortable_decel: f64,
    pub min_gap: f64,
    pub accel_exponent: f64,
    pub emergency_decel: f64,
    pub safe_decel: f64,
    pub car_length: f64,
    pub truck_length: f64,
    /// Extra gap beyond `min_gap` a stopped vehicle needs before it pulls
    /// away from a stopped leader.
    pub restart_gap: f64,
    pub lane_change_cooldown: f64,
    /// Incentive added to mandatory lane changes (diversions, merges).
    pub mandatory_bonus: f64,
}

impl Default for DrivingSection {
    fn default() -> Self {
        DrivingSection {
            time_headway: 1.5,
            car_max_accel: 1.5,
            truck_max_accel: 1.0,
            comfortable_decel: 2.0,
            min_gap: 2.0,
            accel_exponent: 4.0,
            emergency_decel: 8.0,
            safe_decel: 4.0,
            car_length: 5.0,
            truck_length: 12.0,
            restart_gap: 3.0,
            lane_change_cooldown: 3.0,
            mandatory_bonus: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    /// Demand per main lane and direction, vehicles per hour.
    pub main_inflow: f64,
    /// Demand on the on-ramp, vehicles per hour.
    pub ramp_inflow: f64,
}

impl Default for TrafficSection {
    fn default() -> Self {
        TrafficSection { main_inflow: 300.0, ramp_inflow: 150.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommsSection {
    pub v2v_range: f64,
    pub rsu_coverage: f64,
    pub rsu_spacing: f64,
    pub rsu_offset: f64,
    /// Explicit tower positions; overrides spacing/offset when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rsu_positions: Option<Vec<f64>>,
    pub rebroadcast_interval: f64,
    pub max_hops: u32,
    pub lookahead: f64,
    pub advisory_factor: f64,
    pub drop_probability: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message_ttl: Option<f64>,
}

impl Default for CommsSection {
    fn default() -> Self {
        CommsSection {
            v2v_range: 1_000.0,
            rsu_coverage: 1_500.0,
            rsu_spacing: 2_500.0,
            rsu_offset: 1_250.0,
            rsu_positions: None,
            rebroadcast_interval: 1.0,
            max_hops: 3,
            lookahead: 2_000.0,
            advisory_factor: 0.6,
            drop_probability: 0.0,
            message_ttl: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccidentSpec {
    pub time: f64,
    pub lane: u8,
    pub position: f64,
    #[serde(default = "forward")]
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clear_after: Option<f64>,
}

fn forward() -> Direction {
    Direction::Forward
}

/// A scripted accident: at `time`, the nearest active vehicle at or up to
/// 100 m upstream of `position` in `lane` is stopped; if there is none, a
/// stalled car is placed there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccidentEvent {
    pub time: f64,
    pub lane: LaneId,
    pub position: f64,
    pub clear_after: Option<f64>,
}

/// Validated scenario in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub file: ScenarioFile,
    pub road: RoadConfig,
    pub car: VehicleClass,
    pub truck: VehicleClass,
    pub car_driving: DrivingParams,
    pub truck_driving: DrivingParams,
    pub lane_change: LaneChangeParams,
    pub vehicle_count: usize,
    pub truck_share: f64,
    pub seed: u64,
    pub dt: f64,
    pub duration: f64,
    pub warmup: f64,
    pub cdca_enabled: bool,
    pub congestion_threshold: f64,
    pub count_blocked: bool,
    pub main_inflow: f64,
    pub ramp_inflow: f64,
    pub restart_gap: f64,
    pub lane_change_cooldown: f64,
    pub mandatory_bonus: f64,
    pub channel: Channel,
    pub rsus: Vec<Rsu>,
    pub protocol: ProtocolParams,
    pub accidents: Vec<AccidentEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadConfig {
    pub main_length: f64,
    pub lanes_per_direction: u8,
    pub directions: u8,
    pub ramp: Option<Ramp>,
}

impl RoadConfig {
    pub fn network(&self) -> Result<RoadNetwork> {
        RoadNetwork::new(self.main_length, self.lanes_per_direction, self.directions, self.ramp)
    }
}

struct Problems(Vec<String>);

impl Problems {
    fn check(&mut self, ok: bool, key: &str, msg: impl FnOnce() -> String) {
        if !ok {
            self.0.push(format!("{key}: {}", msg()));
        }
    }

    fn positive(&mut self, key: &str, v: f64) {
        self.check(v > 0.0 && v.is_finite(), key, || format!("must be positive, got {v}"));
    }

    fn unit(&mut self, key: &str, v: f64) {
        self.check((0.0..=1.0).contains(&v), key, || format!("must lie in [0, 1], got {v}"));
    }

    fn non_negative(&mut self, key: &str, v: f64) {
        self.check(v >= 0.0 && v.is_finite(), key, || format!("must be non-negative, got {v}"));
    }
}

impl ScenarioConfig {
    /// The reference configuration with no accidents.
    pub fn table1() -> ScenarioConfig {
        ScenarioConfig::from_file(ScenarioFile::default()).expect("defaults are valid")
    }

    pub fn from_file(file: ScenarioFile) -> Result<ScenarioConfig> {
        let f = &file;
        let mut p = Problems(Vec::new());

        p.check(f.broadcast_pattern == "geobroadcast", "broadcast_pattern", || {
            format!("only \"geobroadcast\" is supported, got {:?}", f.broadcast_pattern)
        });
        p.check(f.vehicle_types == "truck & car", "vehicle_types", || {
            format!("only \"truck & car\" is supported, got {:?}", f.vehicle_types)
        });
        p.positive("car_speed_kmh", f.car_speed_kmh);
        p.positive("truck_speed_kmh", f.truck_speed_kmh);
        p.positive("speed_limit_kmh", f.speed_limit_kmh);
        p.check(f.vehicle_count > 0, "vehicle_count", || "must be positive".into());
        p.check(f.lanes_per_direction == 3, "lanes_per_direction", || {
            format!("must be 3, got {}", f.lanes_per_direction)
        });
        p.unit("truck_share", f.truck_share);
        p.non_negative("changing_threshold", f.changing_threshold);
        p.non_negative("politeness", f.politeness);
        p.positive("simulation_speed", f.simulation_speed);
        let has_ramp = match f.road_type.as_str() {
            "main+ramp" => true,
            "main" => false,
            other => {
                p.0.push(format!("road_type: expected \"main+ramp\" or \"main\", got {other:?}"));
                false
            }
        };
        p.positive("dt", f.dt);
        p.positive("duration", f.duration);
        p.non_negative("warmup", f.warmup);
        p.non_negative("congestion_threshold", f.congestion_threshold);

        let d = &f.driving;
        for (key, v) in [
            ("driving.time_headway", d.time_headway),
            ("driving.car_max_accel", d.car_max_accel),
            ("driving.truck_max_accel", d.truck_max_accel),
            ("driving.comfortable_decel", d.comfortable_decel),
            ("driving.min_gap", d.min_gap),
            ("driving.accel_exponent", d.accel_exponent),
            ("driving.emergency_decel", d.emergency_decel),
            ("driving.safe_decel", d.safe_decel),
            ("driving.car_length", d.car_length),
            ("driving.truck_length", d.truck_length),
        ] {
            p.positive(key, v);
        }
        p.non_negative("driving.restart_gap", d.restart_gap);
        p.non_negative("driving.lane_change_cooldown", d.lane_change_cooldown);
        p.non_negative("driving.mandatory_bonus", d.mandatory_bonus);

        p.non_negative("traffic.main_inflow", f.traffic.main_inflow);
        p.non_negative("traffic.ramp_inflow", f.traffic.ramp_inflow);

        let c = &f.comms;
        p.positive("comms.v2v_range", c.v2v_range);
        p.check(c.rsu_coverage > c.v2v_range, "comms.rsu_coverage", || {
            format!("must exceed v2v_range {}, got {}", c.v2v_range, c.rsu_coverage)
        });
        p.positive("comms.rsu_spacing", c.rsu_spacing);
        p.non_negative("comms.rsu_offset", c.rsu_offset);
        p.positive("comms.rebroadcast_interval", c.rebroadcast_interval);
        p.positive("comms.lookahead", c.lookahead);
        p.check(c.advisory_factor > 0.0 && c.advisory_factor <= 1.0, "comms.advisory_factor", || {
            format!("must lie in (0, 1], got {}", c.advisory_factor)
        });
        p.unit("comms.drop_probability", c.drop_probability);
        if let Some(ttl) = c.message_ttl {
            p.positive("comms.message_ttl", ttl);
        }

        let r = &f.road;
        let ramp = has_ramp.then_some(Ramp {
            length: r.ramp_length,
            merge_position: r.merge_position,
            merge_section: r.merge_section,
        });
        if let Err(Error::InvalidGeometry(msg)) =
            RoadNetwork::new(r.main_length, f.lanes_per_direction, r.directions, ramp)
        {
            p.0.extend(msg.split("; ").map(|m| format!("road: {m}")));
        }
        if let Some(positions) = &c.rsu_positions {
            for x in positions {
                p.check((0.0..=r.main_length).contains(x), "comms.rsu_positions", || {
                    format!("{x} lies outside the road")
                });
            }
        }

        let mut accidents = Vec::new();
        for (i, a) in f.accidents.iter().enumerate() {
            let key = format!("accident[{i}]");
            p.check(a.time >= 0.0 && a.time < f.duration, &key, || {
                format!("time {} must lie in [0, duration)", a.time)
            });
            p.check((0.0..=r.main_length).contains(&a.position), &key, || {
                format!("position {} lies outside the road", a.position)
            });
            p.check(r.directions >= 2 || a.direction == Direction::Forward, &key, || {
                "backward direction is not simulated".into()
            });
            if let Some(c) = a.clear_after {
                p.positive(&format!("{key}.clear_after"), c);
            }
            match LaneId::new(a.direction, a.lane) {
                Some(lane) => accidents.push(AccidentEvent {
                    time: a.time,
                    lane,
                    position: a.position,
                    clear_after: a.clear_after,
                }),
                None => p.0.push(format!("{key}: lane must be 1, 2 or 3, got {}", a.lane)),
            }
        }

        if !p.0.is_empty() {
            return Err(Error::Validation(p.0));
        }

        let limit = kmh_to_ms(f.speed_limit_kmh);
        let car = VehicleClass { kind: VehicleKind::Car, desired_speed: kmh_to_ms(f.car_speed_kmh), length: d.car_length };
        let truck = VehicleClass {
            kind: VehicleKind::Truck,
            desired_speed: kmh_to_ms(f.truck_speed_kmh),
            length: d.truck_length,
        };
        let base = DrivingParams {
            desired_speed: car.desired_speed,
            time_headway: d.time_headway,
            max_accel: d.car_max_accel,
            comfortable_decel: d.comfortable_decel,
            min_gap: d.min_gap,
            accel_exponent: d.accel_exponent,
            speed_limit: limit,
            emergency_decel: d.emergency_decel,
        };
        let truck_driving = DrivingParams { desired_speed: truck.desired_speed, max_accel: d.truck_max_accel, ..base };

        let rsus = match &c.rsu_positions {
            Some(xs) => xs.clone(),
            None => {
                let mut xs = Vec::new();
                let mut x = c.rsu_offset;
                while x <= r.main_length {
                    xs.push(x);
                    x += c.rsu_spacing;
                }
                xs
            }
        }
        .into_iter()
        .enumerate()
        .map(|(i, position)| Rsu { id: RsuId(i as u32), position, coverage_radius: c.rsu_coverage })
        .collect();

        let ticks = |seconds: f64| ((seconds / f.dt).round() as u64).max(1);
        let protocol = ProtocolParams {
            rebroadcast_ticks: ticks(c.rebroadcast_interval),
            max_hops: c.max_hops,
            lookahead: c.lookahead,
            advisory_speed: c.advisory_factor * limit,
            cessation: f.cessation,
            message_ttl_ticks: c.message_ttl.map(ticks),
        };

        Ok(ScenarioConfig {
            road: RoadConfig {
                main_length: r.main_length,
                lanes_per_direction: f.lanes_per_direction,
                directions: r.directions,
                ramp,
            },
            car,
            truck,
            car_driving: base,
            truck_driving,
            lane_change: LaneChangeParams {
                politeness: f.politeness,
                changing_threshold: f.changing_threshold,
                safe_decel: d.safe_decel,
            },
            vehicle_count: f.vehicle_count,
            truck_share: f.truck_share,
            seed: f.seed,
            dt: f.dt,
            duration: f.duration,
            warmup: f.warmup,
            cdca_enabled: f.cdca_enabled,
            congestion_threshold: f.congestion_threshold,
            count_blocked: f.count_blocked,
            main_inflow: f.traffic.main_inflow,
            ramp_inflow: f.traffic.ramp_inflow,
            restart_gap: d.restart_gap,
            lane_change_cooldown: d.lane_change_cooldown,
            mandatory_bonus: d.mandatory_bonus,
            channel: Channel { v2v_range: c.v2v_range, drop_probability: c.drop_probability },
            rsus,
            protocol,
            accidents,
            file,
        })
    }

    pub fn ticks(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }

    /// The effective configuration as a scenario document.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("scenario files always serialize")
    }
}

pub fn parse_scenario(text: &str, origin: &str) -> Result<ScenarioFile> {
    toml::from_str(text).map_err(|e| Error::Parse { path: origin.to_string(), message: e.to_string() })
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::Parse { path: origin.clone(), message: e.to_string() })?;
    ScenarioConfig::from_file(parse_scenario(&text, &origin)?)
}
