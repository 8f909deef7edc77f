//! Simulated decentralised broadcast bus with per-link loss, latency and
//! bandwidth.
//!
//! Broadcast is unicast fan-out: one in-flight copy per other robot, each
//! independently dropped or delayed by its ordered-pair link. A message on a
//! finite-bandwidth link occupies it FIFO for ceil(size/bandwidth) ticks;
//! delivery lands on the last occupied tick plus the sampled latency, so a
//! zero-latency link with free capacity delivers by the tick after send.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive, Stream};
use crate::RobotId;

#[derive(Debug, Error, PartialEq)]
pub enum BusError {
    #[error("sender {0:?} is not registered on the bus")]
    UnregisteredSender(RobotId),
}

/// Message class carried by an envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topic {
    Detections,
    Scan,
    PoseGraph,
    PlanDist,
}

impl Topic {
    pub fn as_str(&self) -> &'static str {
        match self {
            Topic::Detections => "detections",
            Topic::Scan => "scan",
            Topic::PoseGraph => "pose_graph",
            Topic::PlanDist => "plan_dist",
        }
    }
}

/// One broadcast message; `msg_id` is unique per sender.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub msg_id: (RobotId, u64),
    pub topic: Topic,
    pub payload: Vec<u8>,
    pub sent_tick: u64,
}

impl Envelope {
    pub fn sender(&self) -> RobotId {
        self.msg_id.0
    }

    pub fn size(&self) -> usize {
        self.payload.len()
    }
}

/// Fault and capacity parameters of one ordered link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub drop_prob: f64,
    /// Latency in ticks, sampled uniformly from [min, max].
    pub latency: (u64, u64),
    /// Bytes per tick; None = unlimited.
    pub bandwidth: Option<u64>,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            drop_prob: 0.0,
            latency: (0, 0),
            bandwidth: None,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(format!("drop_prob must be in [0,1], got {}", self.drop_prob));
        }
        if self.latency.0 > self.latency.1 {
            return Err(format!(
                "latency min {} exceeds max {}",
                self.latency.0, self.latency.1
            ));
        }
        if self.bandwidth == Some(0) {
            return Err("bandwidth must be positive".into());
        }
        Ok(())
    }
}

/// Per-ordered-pair link model: a default plus any overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkModel {
    pub default: LinkParams,
    pub overrides: BTreeMap<(RobotId, RobotId), LinkParams>,
}

impl LinkModel {
    pub fn uniform(params: LinkParams) -> Self {
        Self {
            default: params,
            overrides: BTreeMap::new(),
        }
    }

    pub fn params(&self, sender: RobotId, receiver: RobotId) -> &LinkParams {
        self.overrides.get(&(sender, receiver)).unwrap_or(&self.default)
    }
}

/// Per-envelope trace record for the JSON-lines event log.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub sender: u16,
    pub topic: &'static str,
    pub size: usize,
    pub receivers: Vec<u16>,
    pub dropped: Vec<u16>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BusStats {
    /// Envelopes broadcast.
    pub sent: u64,
    /// Copies delivered.
    pub delivered: u64,
    /// Copies dropped by link loss.
    pub dropped: u64,
}

/// The broadcast bus. Owned by the engine; all interaction goes through
/// `broadcast` and `deliver` from the tick loop.
#[derive(Debug)]
pub struct Bus {
    links: LinkModel,
    robots: BTreeSet<RobotId>,
    /// (delivery tick, sender, seq, receiver) -> envelope copy.
    in_flight: BTreeMap<(u64, RobotId, u64, RobotId), Rc<Envelope>>,
    /// Tick up to which each ordered link is busy transmitting.
    link_free: BTreeMap<(RobotId, RobotId), u64>,
    rngs: BTreeMap<(RobotId, RobotId), ChaCha8Rng>,
    stats: BusStats,
    trace: Vec<TraceRecord>,
}

impl Bus {
    pub fn new<I>(links: LinkModel, robots: I, root_seed: u64) -> Self
    where
        I: IntoIterator<Item = RobotId>,
    {
        let robots: BTreeSet<RobotId> = robots.into_iter().collect();
        let mut rngs = BTreeMap::new();
        for &s in &robots {
            for &r in &robots {
                if s != r {
                    let lane = ((s.0 as u64) << 16) | r.0 as u64;
                    rngs.insert((s, r), derive(root_seed, s.0 as u64, Stream::CommsDrop, lane));
                }
            }
        }
        Self {
            links,
            robots,
            in_flight: BTreeMap::new(),
            link_free: BTreeMap::new(),
            rngs,
            stats: BusStats::default(),
            trace: Vec::new(),
        }
    }

    pub fn stats(&self) -> BusStats {
        self.stats
    }

    /// Drain the per-envelope trace accumulated since the last call.
    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        std::mem::take(&mut self.trace)
    }

    /// Enqueue one copy per other robot, applying per-link loss, latency and
    /// FIFO bandwidth queueing.
    pub fn broadcast(&mut self, env: Envelope) -> Result<(), BusError> {
        let sender = env.sender();
        if !self.robots.contains(&sender) {
            return Err(BusError::UnregisteredSender(sender));
        }
        self.stats.sent += 1;
        let env = Rc::new(env);
        let mut receivers = Vec::new();
        let mut dropped = Vec::new();
        let receivers_sorted: Vec<RobotId> = self
            .robots
            .iter()
            .copied()
            .filter(|&r| r != sender)
            .collect();
        for receiver in receivers_sorted {
            let params = *self.links.params(sender, receiver);
            let rng = self
                .rngs
                .get_mut(&(sender, receiver))
                .expect("registered pair");
            if params.drop_prob > 0.0 && rng.gen_bool(params.drop_prob.min(1.0)) {
                self.stats.dropped += 1;
                dropped.push(receiver.0);
                continue;
            }
            let latency = if params.latency.0 == params.latency.1 {
                params.latency.0
            } else {
                rng.gen_range(params.latency.0..=params.latency.1)
            };
            let delivery = match params.bandwidth {
                None => env.sent_tick + latency,
                Some(bw) => {
                    let occupancy = (env.size() as u64).div_ceil(bw).max(1);
                    let free = self
                        .link_free
                        .get(&(sender, receiver))
                        .copied()
                        .unwrap_or(env.sent_tick);
                    let start = free.max(env.sent_tick);
                    self.link_free.insert((sender, receiver), start + occupancy);
                    start + occupancy - 1 + latency
                }
            };
            self.in_flight.insert(
                (delivery, sender, env.msg_id.1, receiver),
                Rc::clone(&env),
            );
            receivers.push(receiver.0);
        }
        self.trace.push(TraceRecord {
            tick: env.sent_tick,
            sender: sender.0,
            topic: env.topic.as_str(),
            size: env.size(),
            receivers,
            dropped,
        });
        Ok(())
    }

    /// All copies due by `tick`, in (delivery tick, sender, seq) order,
    /// removed from flight. Each (msg_id, receiver) is delivered at most once.
    pub fn deliver(&mut self, tick: u64) -> BTreeMap<RobotId, Vec<Rc<Envelope>>> {
        let rest = self
            .in_flight
            .split_off(&(tick + 1, RobotId(0), 0, RobotId(0)));
        let due = std::mem::replace(&mut self.in_flight, rest);
        let mut out: BTreeMap<RobotId, Vec<Rc<Envelope>>> = BTreeMap::new();
        for ((_, _, _, receiver), env) in due {
            self.stats.delivered += 1;
            out.entry(receiver).or_default().push(env);
        }
        out
    }

    pub fn in_flight_len(&self) -> usize {
        self.in_flight.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn envelope(sender: u16, seq: u64, tick: u64, size: usize) -> Envelope {
        Envelope {
            msg_id: (RobotId(sender), seq),
            topic: Topic::Detections,
            payload: vec![0u8; size],
            sent_tick: tick,
        }
    }

    fn four_robot_bus(params: LinkParams) -> Bus {
        Bus::new(
            LinkModel::uniform(params),
            (0..4).map(RobotId),
            7,
        )
    }

    #[test]
    fn lossless_broadcast_reaches_all_by_next_tick() {
        let mut bus = four_robot_bus(LinkParams::default());
        bus.broadcast(envelope(0, 0, 5, 100)).unwrap();
        let at_next = bus.deliver(6);
        let total: usize = at_next.values().map(|v| v.len()).sum();
        assert_eq!(total, 3);
        assert!(at_next.contains_key(&RobotId(1)));
        assert!(at_next.contains_key(&RobotId(2)));
        assert!(at_next.contains_key(&RobotId(3)));
        assert!(!at_next.contains_key(&RobotId(0)), "no self delivery");
    }

    #[test]
    fn unregistered_sender_rejected() {
        let mut bus = four_robot_bus(LinkParams::default());
        assert_eq!(
            bus.broadcast(envelope(9, 0, 0, 10)),
            Err(BusError::UnregisteredSender(RobotId(9)))
        );
    }

    #[test]
    fn full_drop_on_one_link_only() {
        let mut model = LinkModel::uniform(LinkParams::default());
        model.overrides.insert(
            (RobotId(0), RobotId(2)),
            LinkParams {
                drop_prob: 1.0,
                ..LinkParams::default()
            },
        );
        let mut bus = Bus::new(model, (0..4).map(RobotId), 7);
        bus.broadcast(envelope(0, 0, 0, 10)).unwrap();
        let out = bus.deliver(1);
        assert!(out.contains_key(&RobotId(1)));
        assert!(!out.contains_key(&RobotId(2)), "dropped link");
        assert!(out.contains_key(&RobotId(3)));
        assert_eq!(bus.stats().dropped, 1);
    }

    #[test]
    fn bandwidth_fifo_serialises_equal_sized_messages() {
        // Two messages of size = bandwidth on one link, same tick: the second
        // is delivered exactly one tick later.
        let params = LinkParams {
            bandwidth: Some(100),
            ..LinkParams::default()
        };
        let mut bus = Bus::new(LinkModel::uniform(params), (0..2).map(RobotId), 1);
        bus.broadcast(envelope(0, 0, 10, 100)).unwrap();
        bus.broadcast(envelope(0, 1, 10, 100)).unwrap();
        let first = bus.deliver(10);
        assert_eq!(first[&RobotId(1)].len(), 1);
        assert_eq!(first[&RobotId(1)][0].msg_id.1, 0);
        let second = bus.deliver(11);
        assert_eq!(second[&RobotId(1)].len(), 1);
        assert_eq!(second[&RobotId(1)][0].msg_id.1, 1);
    }

    #[test]
    fn fixed_latency_delays_delivery() {
        let params = LinkParams {
            latency: (2, 2),
            ..LinkParams::default()
        };
        let mut bus = Bus::new(LinkModel::uniform(params), (0..2).map(RobotId), 1);
        bus.broadcast(envelope(0, 0, 5, 10)).unwrap();
        assert!(bus.deliver(5).is_empty());
        assert!(bus.deliver(6).is_empty());
        let out = bus.deliver(7);
        assert_eq!(out[&RobotId(1)].len(), 1);
    }

    #[test]
    fn no_traffic_no_deliveries() {
        let mut bus = four_robot_bus(LinkParams::default());
        assert!(bus.deliver(100).is_empty());
    }

    #[test]
    fn per_link_fifo_order_respects_send_order() {
        let params = LinkParams {
            bandwidth: Some(10),
            ..LinkParams::default()
        };
        let mut bus = Bus::new(LinkModel::uniform(params), (0..2).map(RobotId), 1);
        for seq in 0..5 {
            bus.broadcast(envelope(0, seq, 0, 25)).unwrap();
        }
        // Each message occupies ceil(25/10) = 3 ticks; deliveries land in send
        // order at ticks 2, 5, 8, 11, 14.
        let mut seen = Vec::new();
        for tick in 0..=20 {
            for env in bus.deliver(tick).remove(&RobotId(1)).unwrap_or_default() {
                seen.push((tick, env.msg_id.1));
            }
        }
        assert_eq!(seen, vec![(2, 0), (5, 1), (8, 2), (11, 3), (14, 4)]);
    }

    #[test]
    fn deterministic_replay_identical_schedule() {
        let params = LinkParams {
            drop_prob: 0.3,
            latency: (0, 4),
            bandwidth: Some(50),
        };
        let run = || {
            let mut bus = Bus::new(LinkModel::uniform(params), (0..4).map(RobotId), 99);
            let mut log = Vec::new();
            for tick in 0..20u64 {
                for sender in 0..4u16 {
                    bus.broadcast(envelope(sender, tick, tick, 60)).unwrap();
                }
                for (receiver, envs) in bus.deliver(tick) {
                    for env in envs {
                        log.push((tick, receiver, env.msg_id));
                    }
                }
            }
            (log, bus.stats())
        };
        let (log_a, stats_a) = run();
        let (log_b, stats_b) = run();
        assert_eq!(log_a, log_b);
        assert_eq!(stats_a, stats_b);
    }

    #[test]
    fn no_duplicate_deliveries() {
        let params = LinkParams {
            latency: (0, 3),
            ..LinkParams::default()
        };
        let mut bus = Bus::new(LinkModel::uniform(params), (0..3).map(RobotId), 5);
        for seq in 0..10 {
            bus.broadcast(envelope(0, seq, 0, 10)).unwrap();
        }
        let mut seen = std::collections::HashSet::new();
        for tick in 0..10 {
            for (receiver, envs) in bus.deliver(tick) {
                for env in envs {
                    assert!(seen.insert((env.msg_id, receiver)), "duplicate delivery");
                }
            }
        }
        assert_eq!(seen.len(), 20);
        assert_eq!(bus.in_flight_len(), 0);
    }
}
