//! Browser bindings for the demo page in `www/`.
//!
//! Each exported function returns a JSON string; the page draws it on a
//! canvas. The `*_json` functions hold the logic and are what the native
//! tests call.

use cdca_sim::comms::{deliver, NodeId, Transmission};
use cdca_sim::config::{AccidentSpec, ScenarioConfig, ScenarioFile};
use cdca_sim::dynamics::{following_accel, DrivingParams};
use cdca_sim::protocol::{DecisionField, MessageId, WarningMessage};
use cdca_sim::road::{Direction, LaneId};
use cdca_sim::{run, VehicleId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Series {
    cdca: bool,
    time: Vec<f64>,
    congested: Vec<usize>,
    messages: Vec<u64>,
    final_congested: usize,
    blocked: usize,
    diversions: u64,
    messages_total: u64,
    max_queue_standstill: f64,
}

#[derive(Serialize)]
struct Comparison {
    accident_time: f64,
    runs: Vec<Series>,
}

fn demo_scenario(seed: u64, main_inflow: f64, accident_time: f64, duration: f64) -> ScenarioFile {
    let mut file = ScenarioFile { seed, duration, ..ScenarioFile::default() };
    file.traffic.main_inflow = main_inflow;
    file.accidents = [1, 3]
        .map(|lane| AccidentSpec { time: accident_time, lane, position: 5_000.0, direction: Direction::Forward, clear_after: None })
        .to_vec();
    file
}

/// Runs the two-lane blockage with and without the protocol.
pub fn compare_json(seed: u64, main_inflow: f64, accident_time: f64, duration: f64) -> Result<String, String> {
    let mut runs = Vec::with_capacity(2);
    for cdca in [false, true] {
        let mut file = demo_scenario(seed, main_inflow, accident_time, duration);
        file.cdca_enabled = cdca;
        let config = ScenarioConfig::from_file(file).map_err(|e| e.to_string())?;
        let out = run(&config).map_err(|e| e.to_string())?;
        let s = out.summary;
        let recs = &out.series.records;
        runs.push(Series {
            cdca,
            time: recs.iter().map(|r| r.time).collect(),
            congested: recs.iter().map(|r| r.congested_vehicles).collect(),
            messages: recs.iter().map(|r| r.messages_cumulative).collect(),
            final_congested: s.final_congested,
            blocked: s.blocked,
            diversions: s.diversions,
            messages_total: s.messages_total,
            max_queue_standstill: s.max_queue_standstill,
        });
    }
    serde_json::to_string(&Comparison { accident_time, runs }).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Curve {
    gap: Vec<f64>,
    car: Vec<f64>,
    truck: Vec<f64>,
}

/// Car-following acceleration against net gap at a fixed speed and
/// closing rate.
pub fn accel_curve_json(speed: f64, approach_rate: f64, max_gap: f64) -> Result<String, String> {
    if !(max_gap > 1.0 && max_gap.is_finite()) {
        return Err(format!("max gap must exceed 1 m, got {max_gap}"));
    }
    let config = ScenarioConfig::table1();
    let (car, truck): (DrivingParams, DrivingParams) = (config.car_driving, config.truck_driving);
    let gap: Vec<f64> = (1..=200).map(|i| max_gap * i as f64 / 200.0).collect();
    let eval = |p: &DrivingParams| -> Result<Vec<f64>, String> {
        gap.iter().map(|&g| following_accel(speed.max(0.0), g, approach_rate, p).map_err(|e| e.to_string())).collect()
    };
    let curve = Curve { car: eval(&car)?, truck: eval(&truck)?, gap };
    serde_json::to_string(&curve).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Coverage {
    incident: f64,
    rsus: Vec<f64>,
    position: Vec<f64>,
    /// 0 = not reached, 1 = direct from the stopped vehicle, 2 = only via a
    /// roadside unit.
    reach: Vec<u8>,
}

/// Which points of the forward carriageway hear a warning from a vehicle
/// stopped at `incident`, directly or through the roadside units.
pub fn coverage_json(incident: f64, v2v_range: f64, rsu_coverage: f64) -> Result<String, String> {
    let mut file = ScenarioFile::default();
    file.comms.v2v_range = v2v_range;
    file.comms.rsu_coverage = rsu_coverage;
    let config = ScenarioConfig::from_file(file).map_err(|e| e.to_string())?;
    if !(0.0..=config.road.main_length).contains(&incident) {
        return Err(format!("incident must lie on the road, got {incident}"));
    }

    let origin = VehicleId(0);
    let position: Vec<f64> = (0..=200).map(|i| config.road.main_length * i as f64 / 200.0).collect();
    let listeners: Vec<(VehicleId, f64)> =
        position.iter().enumerate().map(|(i, &x)| (VehicleId(i as u64 + 1), x)).collect();
    let mut everyone = listeners.clone();
    everyone.push((origin, incident));

    let warning = WarningMessage {
        message_id: MessageId(1),
        origin_vehicle_id: origin,
        origin_speed: 0.0,
        blocked_lane: LaneId::fwd(1),
        incident_position: incident,
        created_tick: 0,
        decision_field: DecisionField::None,
        relayed_by_rsu: false,
        hop_count: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let first = vec![Transmission { message: warning.clone(), source: NodeId::Vehicle(origin), emit_position: incident, emit_tick: 0 }];
    let direct = deliver(&first, &everyone, &config.rsus, &config.channel, &mut rng);
    let relays: Vec<Transmission> = config
        .rsus
        .iter()
        .filter(|r| direct.contains_key(&NodeId::Rsu(r.id)))
        .map(|r| Transmission {
            message: WarningMessage { relayed_by_rsu: true, ..warning.clone() },
            source: NodeId::Rsu(r.id),
            emit_position: r.position,
            emit_tick: 1,
        })
        .collect();
    let relayed = deliver(&relays, &everyone, &config.rsus, &config.channel, &mut rng);

    let reach = listeners
        .iter()
        .map(|(id, _)| {
            let node = NodeId::Vehicle(*id);
            if direct.contains_key(&node) {
                1
            } else if relayed.contains_key(&node) {
                2
            } else {
                0
            }
        })
        .collect();
    let rsus = config.rsus.iter().map(|r| r.position).collect();
    serde_json::to_string(&Coverage { incident, rsus, position, reach }).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn compare(seed: u64, main_inflow: f64, accident_time: f64, duration: f64) -> Result<String, JsError> {
    compare_json(seed, main_inflow, accident_time, duration).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn accel_curve(speed: f64, approach_rate: f64, max_gap: f64) -> Result<String, JsError> {
    accel_curve_json(speed, approach_rate, max_gap).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn coverage(incident: f64, v2v_range: f64, rsu_coverage: f64) -> Result<String, JsError> {
    coverage_json(incident, v2v_range, rsu_coverage).map_err(|e| JsError::new(&e))
}
