//! Deterministic decentralised multi-robot ISR simulation.
//!
//! Heterogeneous scout/task robots fuse target detections into per-robot
//! occupancy beliefs, stitch pose graphs across robots to share a reference
//! frame without GNSS, and coordinate trajectories by maximising a
//! mutual-information upper-confidence-bound acquisition function with
//! decentralised Monte Carlo tree search, all over a simulated broadcast bus
//! with loss, latency and bandwidth limits.

#![forbid(unsafe_code)]

use serde::{Deserialize, Serialize};

pub mod belief;
pub mod comms;
pub mod engine;
pub mod geom;
pub mod linalg;
pub mod planner;
pub mod posegraph;
pub mod rng;
pub mod wire;
pub mod world;

/// Identifier of a robot in the team.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct RobotId(pub u16);

/// Identifier of a ground-truth target.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct TargetId(pub u32);

impl std::fmt::Display for RobotId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "r{}", self.0)
    }
}

impl std::fmt::Display for TargetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t{}", self.0)
    }
}
