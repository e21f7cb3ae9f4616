//! Simulated wireless delivery.
//!
//! Loss-free unit-disc model with inclusive range boundaries. Vehicle
//! transmissions reach every other vehicle within V2V range of the emit
//! point and every roadside unit whose coverage contains it; roadside unit
//! transmissions reach every vehicle inside that unit's coverage. All
//! positions here are main-axis coordinates.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, RngCore};

use crate::dynamics::VehicleId;
use crate::protocol::{MessageId, WarningMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RsuId(pub u32);

impl fmt::Display for RsuId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// A transmitting or receiving station. Vehicles order before roadside
/// units, then by id; this is the delivery tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Vehicle(VehicleId),
    Rsu(RsuId),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Vehicle(v) => v.fmt(f),
            NodeId::Rsu(r) => r.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rsu {
    pub id: RsuId,
    pub position: f64,
    pub coverage_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub message: WarningMessage,
    pub source: NodeId,
    pub emit_position: f64,
    pub emit_tick: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inbox {
    pub recipient: NodeId,
    pub messages: Vec<WarningMessage>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub v2v_range: f64,
    /// Independent per-reception loss probability. Zero keeps delivery
    /// exact and independent of transmission order.
    pub drop_probability: f64,
}

impl Default for Channel {
    fn default() -> Self {
        Channel { v2v_range: 1_000.0, drop_probability: 0.0 }
    }
}

pub fn in_v2v_range(pos_a: f64, pos_b: f64, v2v_range: f64) -> bool {
    (pos_a - pos_b).abs() <= v2v_range
}

pub fn rsu_covers(rsu: &Rsu, pos: f64) -> bool {
    (rsu.position - pos).abs() <= rsu.coverage_radius
}

/// Routes one tick's transmissions to per-recipient inboxes.
///
/// `vehicles` holds each vehicle's current main-axis position. Each inbox
/// keeps one copy per message id: the earliest emitted, then the one from
/// the lowest source. Inboxes are keyed and ordered by recipient.
pub fn deliver(
    transmissions: &[Transmission],
    vehicles: &[(VehicleId, f64)],
    rsus: &[Rsu],
    channel: &Channel,
    rng: &mut dyn RngCore,
) -> BTreeMap<NodeId, Inbox> {
    let mut order: Vec<&Transmission> = transmissions.iter().collect();
    order.sort_by(|a, b| {
        (a.emit_tick, a.source, a.message.message_id).cmp(&(b.emit_tick, b.source, b.message.message_id))
    });

    let mut received: BTreeMap<NodeId, BTreeMap<MessageId, (usize, &WarningMessage)>> = BTreeMap::new();
    let mut hits: Vec<(NodeId, usize)> = Vec::new();
    for (rank, t) in order.iter().enumerate() {
        match t.source {
            NodeId::Vehicle(sender) => {
                for &(id, pos) in vehicles {
                    if id != sender && in_v2v_range(t.emit_position, pos, channel.v2v_range) {
                        hits.push((NodeId::Vehicle(id), rank));
                    }
                }
                for rsu in rsus {
                    if rsu_covers(rsu, t.emit_position) {
                        hits.push((NodeId::Rsu(rsu.id), rank));
                    }
                }
            }
            NodeId::Rsu(sender) => {
                let Some(rsu) = rsus.iter().find(|r| r.id == sender) else {
                    continue;
                };
                for &(id, pos) in vehicles {
                    if rsu_covers(rsu, pos) {
                        hits.push((NodeId::Vehicle(id), rank));
                    }
                }
            }
        }
    }

    for (to, rank) in hits {
        if channel.drop_probability > 0.0 && rng.random::<f64>() < channel.drop_probability {
            continue;
        }
        let msg = &order[rank].message;
        received.entry(to).or_default().entry(msg.message_id).or_insert((rank, msg));
    }

    received
        .into_iter()
        .map(|(recipient, by_id)| {
            let mut firsts: Vec<(usize, &WarningMessage)> = by_id.into_values().collect();
            firsts.sort_by_key(|(rank, _)| *rank);
            let messages = firsts.into_iter().map(|(_, m)| m.clone()).collect();
            (recipient, Inbox { recipient, messages })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::DecisionField;
    use crate::road::LaneId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn msg(id: u64) -> WarningMessage {
        WarningMessage {
            message_id: MessageId(id),
            origin_vehicle_id: VehicleId(1),
            origin_speed: 0.0,
            blocked_lane: LaneId::fwd(1),
            incident_position: 5_000.0,
            created_tick: 0,
            decision_field: DecisionField::None,
            relayed_by_rsu: false,
            hop_count: 0,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn v2v_range_boundaries() {
        assert!(in_v2v_range(10.0, 10.0, 1_000.0));
        assert!(in_v2v_range(0.0, 999.0, 1_000.0));
        assert!(in_v2v_range(0.0, 1_000.0, 1_000.0));
        assert!(!in_v2v_range(0.0, 1_001.0, 1_000.0));
    }

    #[test]
    fn rsu_coverage_is_inclusive() {
        let rsu = Rsu { id: RsuId(0), position: 3_000.0, coverage_radius: 1_500.0 };
        assert!(rsu_covers(&rsu, 3_000.0));
        assert!(rsu_covers(&rsu, 4_500.0));
        assert!(!rsu_covers(&rsu, 4_501.0));
    }

    #[test]
    fn follower_in_range_hears_affected_vehicle() {
        let t = Transmission {
            message: msg(1),
            source: NodeId::Vehicle(VehicleId(1)),
            emit_position: 5_000.0,
            emit_tick: 0,
        };
        let vehicles = [(VehicleId(1), 5_000.0), (VehicleId(2), 4_500.0)];
        let out = deliver(&[t], &vehicles, &[], &Channel::default(), &mut rng());
        assert_eq!(out.len(), 1, "sender must not hear itself");
        assert_eq!(out[&NodeId::Vehicle(VehicleId(2))].messages.len(), 1);
    }

    #[test]
    fn relays_of_one_message_collapse() {
        let rsus = [
            Rsu { id: RsuId(0), position: 2_000.0, coverage_radius: 1_500.0 },
            Rsu { id: RsuId(1), position: 4_000.0, coverage_radius: 1_500.0 },
        ];
        let mut relayed = msg(7);
        relayed.relayed_by_rsu = true;
        let ts: Vec<Transmission> = rsus
            .iter()
            .map(|r| Transmission { message: relayed.clone(), source: NodeId::Rsu(r.id), emit_position: r.position, emit_tick: 3 })
            .collect();
        let out = deliver(&ts, &[(VehicleId(9), 3_000.0)], &rsus, &Channel::default(), &mut rng());
        assert_eq!(out[&NodeId::Vehicle(VehicleId(9))].messages.len(), 1);
    }

    #[test]
    fn vehicle_broadcast_reaches_covering_rsu_only() {
        let rsus = [
            Rsu { id: RsuId(0), position: 1_000.0, coverage_radius: 1_500.0 },
            Rsu { id: RsuId(1), position: 8_000.0, coverage_radius: 1_500.0 },
        ];
        let t = Transmission { message: msg(1), source: NodeId::Vehicle(VehicleId(1)), emit_position: 2_400.0, emit_tick: 0 };
        let out = deliver(&[t], &[], &rsus, &Channel::default(), &mut rng());
        assert!(out.contains_key(&NodeId::Rsu(RsuId(0))));
        assert!(!out.contains_key(&NodeId::Rsu(RsuId(1))));
    }

    #[test]
    fn first_arrival_wins_with_lower_source() {
        let mut a = msg(5);
        a.hop_count = 1;
        let b = msg(5);
        let ts = [
            Transmission { message: a, source: NodeId::Vehicle(VehicleId(8)), emit_position: 0.0, emit_tick: 2 },
            Transmission { message: b.clone(), source: NodeId::Vehicle(VehicleId(3)), emit_position: 0.0, emit_tick: 2 },
        ];
        let out = deliver(&ts, &[(VehicleId(20), 10.0)], &[], &Channel::default(), &mut rng());
        assert_eq!(out[&NodeId::Vehicle(VehicleId(20))].messages, vec![b]);
    }

    #[test]
    fn full_drop_probability_delivers_nothing() {
        let t = Transmission { message: msg(1), source: NodeId::Vehicle(VehicleId(1)), emit_position: 0.0, emit_tick: 0 };
        let ch = Channel { drop_probability: 1.0, ..Channel::default() };
        assert!(deliver(&[t], &[(VehicleId(2), 1.0)], &[], &ch, &mut rng()).is_empty());
    }
}
