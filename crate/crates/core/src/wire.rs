//! Binary payload encodings for the message bus, little endian throughout.
//!
//! Payload sizes feed the bus bandwidth model, so encodings are compact:
//! scans scale with landmark count, plan distributions use u16 cell pairs and
//! f32 probabilities per candidate plan.

use thiserror::Error;

use crate::belief::{Detection, Outcome};
use crate::geom::{Cell, Pose2};
use crate::linalg::Mat3;
use crate::planner::{TeamPlanDistribution, TrajectoryPlan};
use crate::posegraph::{CompressedScan, Edge, EdgeKind, NodeId, PoseGraph};
use crate::world::SensorKind;
use crate::{RobotId, TargetId};

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("payload truncated at byte {0}")]
    Truncated(usize),
    #[error("invalid {what} tag {value}")]
    BadTag { what: &'static str, value: u8 },
    #[error("graph payload inconsistent: {0}")]
    BadGraph(String),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.buf.len() {
            return Err(WireError::Truncated(self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("len 2")))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("len 4")))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("len 8")))
    }

    fn f32(&mut self) -> Result<f32, WireError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("len 4")))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("len 8")))
    }

    fn done(&self) -> Result<(), WireError> {
        if self.pos != self.buf.len() {
            return Err(WireError::Truncated(self.pos));
        }
        Ok(())
    }
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Detections batch plus piggybacked confirmation announcements
/// (target id and its cell, so receivers can pin their beliefs).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionsMsg {
    pub detections: Vec<Detection>,
    pub confirmations: Vec<(TargetId, Cell)>,
}

pub fn encode_detections(msg: &DetectionsMsg) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + msg.detections.len() * 40);
    put_u32(&mut out, msg.detections.len() as u32);
    for d in &msg.detections {
        put_u16(&mut out, d.origin_robot.0);
        put_u64(&mut out, d.seq);
        put_u16(&mut out, d.cell.x);
        put_u16(&mut out, d.cell.y);
        out.push(match d.outcome {
            Outcome::Negative => 0,
            Outcome::Positive => 1,
        });
        out.push(match d.sensor_kind {
            SensorKind::ScoutLongRange => 0,
            SensorKind::TaskConfirm => 1,
        });
        put_f64(&mut out, d.effective_p_detect);
        put_f64(&mut out, d.p_false);
        put_u64(&mut out, d.tick);
    }
    put_u32(&mut out, msg.confirmations.len() as u32);
    for (t, cell) in &msg.confirmations {
        put_u32(&mut out, t.0);
        put_u16(&mut out, cell.x);
        put_u16(&mut out, cell.y);
    }
    out
}

pub fn decode_detections(buf: &[u8]) -> Result<DetectionsMsg, WireError> {
    let mut r = Reader::new(buf);
    let n = r.u32()? as usize;
    let mut detections = Vec::with_capacity(n);
    for _ in 0..n {
        let origin_robot = RobotId(r.u16()?);
        let seq = r.u64()?;
        let cell = Cell::new(r.u16()?, r.u16()?);
        let outcome = match r.u8()? {
            0 => Outcome::Negative,
            1 => Outcome::Positive,
            v => return Err(WireError::BadTag { what: "outcome", value: v }),
        };
        let sensor_kind = match r.u8()? {
            0 => SensorKind::ScoutLongRange,
            1 => SensorKind::TaskConfirm,
            v => return Err(WireError::BadTag { what: "sensor kind", value: v }),
        };
        let effective_p_detect = r.f64()?;
        let p_false = r.f64()?;
        let tick = r.u64()?;
        detections.push(Detection {
            origin_robot,
            seq,
            cell,
            outcome,
            sensor_kind,
            effective_p_detect,
            p_false,
            tick,
        });
    }
    let m = r.u32()? as usize;
    let mut confirmations = Vec::with_capacity(m);
    for _ in 0..m {
        let t = TargetId(r.u32()?);
        let cell = Cell::new(r.u16()?, r.u16()?);
        confirmations.push((t, cell));
    }
    r.done()?;
    Ok(DetectionsMsg {
        detections,
        confirmations,
    })
}

/// Scan payload: landmarks only; the signature is recomputed on decode so
/// both sides always agree on it.
pub fn encode_scan(scan: &CompressedScan) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + scan.landmarks.len() * 16);
    put_u16(&mut out, scan.origin_robot.0);
    put_u64(&mut out, scan.node_id.raw());
    put_u32(&mut out, scan.landmarks.len() as u32);
    for &(x, y) in &scan.landmarks {
        put_f64(&mut out, x);
        put_f64(&mut out, y);
    }
    out
}

pub fn decode_scan(buf: &[u8]) -> Result<CompressedScan, WireError> {
    let mut r = Reader::new(buf);
    let origin = RobotId(r.u16()?);
    let node_id = NodeId::from_raw(r.u64()?);
    let n = r.u32()? as usize;
    let mut landmarks = Vec::with_capacity(n);
    for _ in 0..n {
        let x = r.f64()?;
        let y = r.f64()?;
        landmarks.push((x, y));
    }
    r.done()?;
    Ok(CompressedScan::new(origin, node_id, landmarks))
}

pub fn encode_pose_graph(graph: &PoseGraph) -> Vec<u8> {
    let mut out = Vec::new();
    put_u64(&mut out, graph.anchor().raw());
    put_u32(&mut out, graph.nodes().len() as u32);
    for (id, node) in graph.nodes() {
        put_u64(&mut out, id.raw());
        put_u16(&mut out, node.owner.0);
        put_f64(&mut out, node.pose.x);
        put_f64(&mut out, node.pose.y);
        put_f64(&mut out, node.pose.theta);
    }
    put_u32(&mut out, graph.edges().len() as u32);
    for e in graph.edges() {
        put_u64(&mut out, e.from.raw());
        put_u64(&mut out, e.to.raw());
        out.push(match e.kind {
            EdgeKind::Odometry => 0,
            EdgeKind::IntraLoop => 1,
            EdgeKind::InterLoop => 2,
        });
        put_f64(&mut out, e.relative.x);
        put_f64(&mut out, e.relative.y);
        put_f64(&mut out, e.relative.theta);
        let m = &e.information.0;
        for &v in &[m[0][0], m[0][1], m[0][2], m[1][1], m[1][2], m[2][2]] {
            put_f64(&mut out, v);
        }
    }
    out
}

pub fn decode_pose_graph(buf: &[u8]) -> Result<PoseGraph, WireError> {
    let mut r = Reader::new(buf);
    let anchor = NodeId::from_raw(r.u64()?);
    let n_nodes = r.u32()? as usize;
    let mut graph: Option<PoseGraph> = None;
    for _ in 0..n_nodes {
        let id = NodeId::from_raw(r.u64()?);
        let owner = RobotId(r.u16()?);
        let pose = Pose2::new(r.f64()?, r.f64()?, r.f64()?);
        match &mut graph {
            None => graph = Some(PoseGraph::new(id, owner, pose)),
            Some(g) => g
                .add_node(id, owner, pose)
                .map_err(|e| WireError::BadGraph(e.to_string()))?,
        }
    }
    let mut graph = graph.ok_or(WireError::BadGraph("empty graph".into()))?;
    let n_edges = r.u32()? as usize;
    for _ in 0..n_edges {
        let from = NodeId::from_raw(r.u64()?);
        let to = NodeId::from_raw(r.u64()?);
        let kind = match r.u8()? {
            0 => EdgeKind::Odometry,
            1 => EdgeKind::IntraLoop,
            2 => EdgeKind::InterLoop,
            v => return Err(WireError::BadTag { what: "edge kind", value: v }),
        };
        let relative = Pose2::new(r.f64()?, r.f64()?, r.f64()?);
        let (i11, i12, i13, i22, i23, i33) =
            (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let information = Mat3([[i11, i12, i13], [i12, i22, i23], [i13, i23, i33]]);
        graph
            .add_edge(Edge {
                from,
                to,
                relative,
                information,
                kind,
            })
            .map_err(|e| WireError::BadGraph(e.to_string()))?;
    }
    r.done()?;
    graph
        .set_anchor(anchor)
        .map_err(|e| WireError::BadGraph(e.to_string()))?;
    Ok(graph)
}

/// The compressed distribution exchanged between planners: per robot, up to
/// k_dist records of (H cell indices as u16 pairs, probability as f32).
pub fn encode_plan_dist(dist: &TeamPlanDistribution) -> Vec<u8> {
    let mut out = Vec::new();
    put_u64(&mut out, dist.stamp);
    put_u16(&mut out, dist.per_robot.len() as u16);
    for (robot, plans) in &dist.per_robot {
        put_u16(&mut out, robot.0);
        out.push(plans.len() as u8);
        for (plan, prob) in plans {
            put_f32(&mut out, *prob as f32);
            put_u16(&mut out, plan.waypoints.len() as u16);
            for wp in &plan.waypoints {
                put_u16(&mut out, wp.x);
                put_u16(&mut out, wp.y);
            }
        }
    }
    out
}

pub fn decode_plan_dist(buf: &[u8]) -> Result<TeamPlanDistribution, WireError> {
    let mut r = Reader::new(buf);
    let stamp = r.u64()?;
    let n_robots = r.u16()? as usize;
    let mut dist = TeamPlanDistribution::empty(stamp);
    for _ in 0..n_robots {
        let robot = RobotId(r.u16()?);
        let n_plans = r.u8()? as usize;
        let mut plans = Vec::with_capacity(n_plans);
        for _ in 0..n_plans {
            let prob = r.f32()? as f64;
            let h = r.u16()? as usize;
            let mut waypoints = Vec::with_capacity(h);
            for _ in 0..h {
                waypoints.push(Cell::new(r.u16()?, r.u16()?));
            }
            plans.push((
                TrajectoryPlan {
                    robot_id: robot,
                    waypoints,
                    feasible: true,
                },
                prob,
            ));
        }
        dist.per_robot.insert(robot, plans);
    }
    r.done()?;
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posegraph::default_odometry_information;
    use proptest::prelude::*;

    #[test]
    fn detections_roundtrip() {
        let msg = DetectionsMsg {
            detections: vec![
                Detection {
                    origin_robot: RobotId(3),
                    seq: 17,
                    cell: Cell::new(5, 9),
                    outcome: Outcome::Positive,
                    sensor_kind: SensorKind::ScoutLongRange,
                    effective_p_detect: 0.85,
                    p_false: 0.05,
                    tick: 42,
                },
                Detection {
                    origin_robot: RobotId(0),
                    seq: 0,
                    cell: Cell::new(0, 0),
                    outcome: Outcome::Negative,
                    sensor_kind: SensorKind::TaskConfirm,
                    effective_p_detect: 1.0,
                    p_false: 0.0,
                    tick: 0,
                },
            ],
            confirmations: vec![(TargetId(2), Cell::new(3, 3)), (TargetId(7), Cell::new(1, 0))],
        };
        let bytes = encode_detections(&msg);
        assert_eq!(decode_detections(&bytes).unwrap(), msg);
    }

    #[test]
    fn truncated_payload_rejected() {
        let msg = DetectionsMsg {
            detections: vec![],
            confirmations: vec![(TargetId(1), Cell::new(0, 0))],
        };
        let bytes = encode_detections(&msg);
        assert!(matches!(
            decode_detections(&bytes[..bytes.len() - 1]),
            Err(WireError::Truncated(_))
        ));
        assert!(matches!(
            decode_scan(&[1, 2, 3]),
            Err(WireError::Truncated(_))
        ));
    }

    #[test]
    fn scan_roundtrip_recomputes_signature() {
        let scan = CompressedScan::new(
            RobotId(1),
            NodeId::new(RobotId(1), 30),
            vec![(1.0, 2.0), (-3.5, 0.25), (10.0, -4.0)],
        );
        let bytes = encode_scan(&scan);
        let back = decode_scan(&bytes).unwrap();
        assert_eq!(back, scan);
        // Size scales with landmark count.
        let bigger = CompressedScan::new(
            RobotId(1),
            NodeId::new(RobotId(1), 31),
            (0..64).map(|i| (i as f64, -(i as f64))).collect(),
        );
        assert!(encode_scan(&bigger).len() > bytes.len());
    }

    #[test]
    fn pose_graph_roundtrip() {
        let r = RobotId(2);
        let mut g = PoseGraph::new(NodeId::new(r, 0), r, Pose2::identity());
        g.extend_odometry(r, 0, Pose2::new(1.0, 0.0, 0.1), default_odometry_information())
            .unwrap();
        g.extend_odometry(r, 1, Pose2::new(0.5, 0.5, -0.2), default_odometry_information())
            .unwrap();
        let bytes = encode_pose_graph(&g);
        let back = decode_pose_graph(&bytes).unwrap();
        assert_eq!(back.anchor(), g.anchor());
        assert_eq!(back.n_nodes(), g.n_nodes());
        assert_eq!(back.edges().len(), g.edges().len());
        for (a, b) in g.edges().iter().zip(back.edges()) {
            assert_eq!(a.relative, b.relative);
            assert_eq!(a.information, b.information);
            assert_eq!(a.kind, b.kind);
        }
    }

    proptest! {
        /// Plan-distribution wire format: encode/decode identity on waypoints
        /// and f32-quantised probabilities.
        #[test]
        fn plan_dist_roundtrip(
            stamp in 0u64..10_000,
            robots in proptest::collection::vec((0u16..8, 1usize..4), 1..4),
            h in 1usize..6,
        ) {
            let mut dist = TeamPlanDistribution::empty(stamp);
            for (i, &(robot, n_plans)) in robots.iter().enumerate() {
                let robot = RobotId(robot + i as u16 * 8);
                let plans: Vec<(TrajectoryPlan, f64)> = (0..n_plans)
                    .map(|k| {
                        let cell = Cell::new(k as u16, (k + 1) as u16);
                        (
                            TrajectoryPlan::stay_in_place(robot, cell, h),
                            1.0 / n_plans as f64,
                        )
                    })
                    .collect();
                dist.per_robot.insert(robot, plans);
            }
            let bytes = encode_plan_dist(&dist);
            let back = decode_plan_dist(&bytes).unwrap();
            prop_assert_eq!(back.stamp, dist.stamp);
            prop_assert_eq!(back.per_robot.len(), dist.per_robot.len());
            for (robot, plans) in &dist.per_robot {
                let got = &back.per_robot[robot];
                prop_assert_eq!(got.len(), plans.len());
                for ((gp, gprob), (p, prob)) in got.iter().zip(plans) {
                    prop_assert_eq!(&gp.waypoints, &p.waypoints);
                    prop_assert!((gprob - prob).abs() < 1e-6);
                }
            }
        }
    }
}
