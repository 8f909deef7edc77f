//! Per-robot pose graphs, inter-robot map stitching and a nonlinear
//! least-squares SE(2) solver establishing a common reference frame without
//! GNSS.

mod g2o;
mod scan;

pub use g2o::{read_g2o, write_g2o};
pub use scan::{
    estimate_relative_pose, similarity_score, CompressedScan, RegistrationParams, SIGNATURE_BINS,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{wrap_angle, Pose2};
use crate::linalg::{BlockSparseSym, Mat3, Vec3};
use crate::RobotId;

/// Graph node identifier: owning robot in the high bits, per-robot sequence
/// number in the low bits. Sorts by (robot, seq).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct NodeId(u64);

impl NodeId {
    pub fn new(robot: RobotId, seq: u32) -> Self {
        Self(((robot.0 as u64) << 32) | seq as u64)
    }

    pub fn robot(&self) -> RobotId {
        RobotId((self.0 >> 32) as u16)
    }

    pub fn seq(&self) -> u32 {
        (self.0 & 0xffff_ffff) as u32
    }

    pub fn raw(&self) -> u64 {
        self.0
    }

    pub fn from_raw(raw: u64) -> Self {
        Self(raw)
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.robot(), self.seq())
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("duplicate node {0}")]
    DuplicateNode(NodeId),
    #[error("information matrix for edge {from} -> {to} is not symmetric positive definite")]
    BadInformation { from: NodeId, to: NodeId },
    #[error("covariance matrix is not invertible")]
    BadCovariance,
    #[error("odometry edge {from} -> {to} does not extend a single-robot chain")]
    BrokenOdometryChain { from: NodeId, to: NodeId },
    #[error("graph is disconnected: {0} components, sizes {1:?}")]
    Disconnected(usize, Vec<usize>),
    #[error("anchor {0} is not a node of the graph")]
    MissingAnchor(NodeId),
    #[error("normal equations not positive definite (degenerate graph)")]
    SingularSystem,
    #[error("g2o parse error at line {line}: {msg}")]
    G2oParse { line: usize, msg: String },
}

/// Constraint class of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    Odometry,
    IntraLoop,
    InterLoop,
}

/// Relative-pose constraint between two nodes with an information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub relative: Pose2,
    pub information: Mat3,
    pub kind: EdgeKind,
}

impl Edge {
    fn same_constraint(&self, other: &Edge) -> bool {
        self.from == other.from
            && self.to == other.to
            && self.kind == other.kind
            && self.relative.x.to_bits() == other.relative.x.to_bits()
            && self.relative.y.to_bits() == other.relative.y.to_bits()
            && self.relative.theta.to_bits() == other.relative.theta.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub owner: RobotId,
    pub pose: Pose2,
}

/// A pose graph: nodes owned by robots, odometry and loop-closure edges, and
/// an anchor node whose pose fixes the gauge.
#[derive(Debug, Clone)]
pub struct PoseGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: Vec<Edge>,
    anchor: NodeId,
}

impl PoseGraph {
    /// A graph containing a single anchor node.
    pub fn new(anchor: NodeId, owner: RobotId, pose: Pose2) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(anchor, Node { owner, pose });
        Self {
            nodes,
            edges: Vec::new(),
            anchor,
        }
    }

    pub fn anchor(&self) -> NodeId {
        self.anchor
    }

    /// Re-anchor the gauge at an existing node.
    pub fn set_anchor(&mut self, anchor: NodeId) -> Result<(), GraphError> {
        if !self.nodes.contains_key(&anchor) {
            return Err(GraphError::MissingAnchor(anchor));
        }
        self.anchor = anchor;
        Ok(())
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, Node> {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn pose_of(&self, id: NodeId) -> Option<Pose2> {
        self.nodes.get(&id).map(|n| n.pose)
    }

    pub fn add_node(&mut self, id: NodeId, owner: RobotId, pose: Pose2) -> Result<(), GraphError> {
        if self.nodes.contains_key(&id) {
            return Err(GraphError::DuplicateNode(id));
        }
        self.nodes.insert(id, Node { owner, pose });
        Ok(())
    }

    pub fn add_edge(&mut self, edge: Edge) -> Result<(), GraphError> {
        if !self.nodes.contains_key(&edge.from) {
            return Err(GraphError::UnknownNode(edge.from));
        }
        if !self.nodes.contains_key(&edge.to) {
            return Err(GraphError::UnknownNode(edge.to));
        }
        if !edge.information.is_spd(1e-9) {
            return Err(GraphError::BadInformation {
                from: edge.from,
                to: edge.to,
            });
        }
        if edge.kind == EdgeKind::Odometry {
            let chain_ok = edge.from.robot() == edge.to.robot()
                && edge.to.seq() == edge.from.seq() + 1;
            if !chain_ok {
                return Err(GraphError::BrokenOdometryChain {
                    from: edge.from,
                    to: edge.to,
                });
            }
        }
        self.edges.push(edge);
        Ok(())
    }

    /// Append the next odometry node for `robot` and the edge reaching it.
    /// The new node's initial estimate composes the previous estimate with the
    /// measured relative motion.
    pub fn extend_odometry(
        &mut self,
        robot: RobotId,
        from_seq: u32,
        relative: Pose2,
        information: Mat3,
    ) -> Result<NodeId, GraphError> {
        let from = NodeId::new(robot, from_seq);
        let prev = self.pose_of(from).ok_or(GraphError::UnknownNode(from))?;
        let to = NodeId::new(robot, from_seq + 1);
        self.add_node(to, robot, prev.compose(&relative))?;
        self.add_edge(Edge {
            from,
            to,
            relative,
            information,
            kind: EdgeKind::Odometry,
        })?;
        Ok(to)
    }

    /// Union of two graphs. Node estimates of `self` win on shared ids;
    /// duplicate constraints are kept once.
    pub fn merge(&self, other: &PoseGraph) -> PoseGraph {
        let mut out = self.clone();
        for (&id, node) in &other.nodes {
            out.nodes.entry(id).or_insert_with(|| node.clone());
        }
        for e in &other.edges {
            if !out.edges.iter().any(|own| own.same_constraint(e)) {
                out.edges.push(e.clone());
            }
        }
        out
    }

    /// Weighted least-squares objective at the current estimates.
    pub fn objective(&self) -> f64 {
        objective_of(&self.nodes, &self.edges)
    }

    /// Overwrite node estimates from a solver solution.
    pub fn apply_solution(&mut self, solution: &BTreeMap<NodeId, Pose2>) {
        for (id, pose) in solution {
            if let Some(node) = self.nodes.get_mut(id) {
                node.pose = *pose;
            }
        }
    }

    fn connected_components(&self) -> Vec<usize> {
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        let index: BTreeMap<NodeId, usize> =
            ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for e in &self.edges {
            let a = find(&mut parent, index[&e.from]);
            let b = find(&mut parent, index[&e.to]);
            parent[a] = b;
        }
        let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
        for i in 0..ids.len() {
            let root = find(&mut parent, i);
            *sizes.entry(root).or_insert(0) += 1;
        }
        sizes.values().copied().collect()
    }
}

/// SE(2) edge error: boxminus of the predicted relative pose against the
/// measured one, with angle wrapping.
fn edge_error(from: &Pose2, to: &Pose2, rel: &Pose2) -> Vec3 {
    let (si, ci) = from.theta.sin_cos();
    let (sr, cr) = rel.theta.sin_cos();
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    // In from's frame.
    let lx = ci * dx + si * dy;
    let ly = -si * dx + ci * dy;
    // Minus the measurement, rotated into the measurement frame.
    let ex = cr * (lx - rel.x) + sr * (ly - rel.y);
    let ey = -sr * (lx - rel.x) + cr * (ly - rel.y);
    let eth = wrap_angle(to.theta - from.theta - rel.theta);
    [ex, ey, eth]
}

fn objective_of(nodes: &BTreeMap<NodeId, Node>, edges: &[Edge]) -> f64 {
    let mut sum = 0.0;
    for e in edges {
        let from = &nodes[&e.from].pose;
        let to = &nodes[&e.to].pose;
        let err = edge_error(from, to, &e.relative);
        let w = e.information.mul_vec(&err);
        sum += err[0] * w[0] + err[1] * w[1] + err[2] * w[2];
    }
    sum
}

/// Result of a pose-graph solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub poses: BTreeMap<NodeId, Pose2>,
    pub converged: bool,
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
}

const SOLVER_STEP_TOL: f64 = 1e-9;
const SOLVER_MAX_ITERS: usize = 100;

/// Gauss-Newton minimisation of the weighted edge error over SE(2), with the
/// anchor fixed. A halving line search keeps the objective non-increasing;
/// terminates when the step norm drops below 1e-9 or after 100 iterations.
pub fn solve_pose_graph(graph: &PoseGraph) -> Result<Solution, GraphError> {
    if !graph.nodes.contains_key(&graph.anchor) {
        return Err(GraphError::MissingAnchor(graph.anchor));
    }
    let components = graph.connected_components();
    if components.len() > 1 {
        return Err(GraphError::Disconnected(components.len(), components));
    }

    // Variable layout: all nodes except the anchor, in id order.
    let var_ids: Vec<NodeId> = graph
        .nodes
        .keys()
        .copied()
        .filter(|&id| id != graph.anchor)
        .collect();
    let var_index: BTreeMap<NodeId, usize> = var_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();

    let mut nodes = graph.nodes.clone();
    let mut objective = objective_of(&nodes, &graph.edges);
    let initial_objective = objective;
    let mut converged = var_ids.is_empty();
    let mut iterations = 0;

    for _ in 0..SOLVER_MAX_ITERS {
        if var_ids.is_empty() {
            break;
        }
        iterations += 1;
        let n = var_ids.len();
        let mut h = BlockSparseSym::new(n);
        let mut b: Vec<Vec3> = vec![[0.0; 3]; n];

        for e in &graph.edges {
            let from = nodes[&e.from].pose;
            let to = nodes[&e.to].pose;
            let err = edge_error(&from, &to, &e.relative);

            let (si, ci) = from.theta.sin_cos();
            let (sr, cr) = e.relative.theta.sin_cos();
            let dx = to.x - from.x;
            let dy = to.y - from.y;
            // R_rel^T R_i^T and R_rel^T dR_i^T/dtheta (tj - ti).
            let rri = [
                [cr * ci + sr * -si, cr * si + sr * ci],
                [-sr * ci + cr * -si, -sr * si + cr * ci],
            ];
            let dpos = [
                cr * (-si * dx + ci * dy) + sr * (-ci * dx - si * dy),
                -sr * (-si * dx + ci * dy) + cr * (-ci * dx - si * dy),
            ];
            let a_jac = Mat3([
                [-rri[0][0], -rri[0][1], dpos[0]],
                [-rri[1][0], -rri[1][1], dpos[1]],
                [0.0, 0.0, -1.0],
            ]);
            let b_jac = Mat3([
                [rri[0][0], rri[0][1], 0.0],
                [rri[1][0], rri[1][1], 0.0],
                [0.0, 0.0, 1.0],
            ]);

            let vi = var_index.get(&e.from).copied();
            let vj = var_index.get(&e.to).copied();
            let lam = &e.information;

            if let Some(i) = vi {
                let at_lam = a_jac.transpose().mul(lam);
                h.add_block(i, i, &at_lam.mul(&a_jac));
                let g = at_lam.mul_vec(&err);
                for k in 0..3 {
                    b[i][k] += g[k];
                }
            }
            if let Some(j) = vj {
                let bt_lam = b_jac.transpose().mul(lam);
                h.add_block(j, j, &bt_lam.mul(&b_jac));
                let g = bt_lam.mul_vec(&err);
                for k in 0..3 {
                    b[j][k] += g[k];
                }
            }
            if let (Some(i), Some(j)) = (vi, vj) {
                // Off-diagonal block, stored in the lower triangle.
                let bt_lam_a = b_jac.transpose().mul(lam).mul(&a_jac);
                if j > i {
                    h.add_block(j, i, &bt_lam_a);
                } else {
                    h.add_block(i, j, &bt_lam_a.transpose());
                }
            }
        }

        let neg_b: Vec<Vec3> = b.iter().map(|v| [-v[0], -v[1], -v[2]]).collect();
        let delta = h.cholesky_solve(&neg_b).ok_or(GraphError::SingularSystem)?;

        let step_norm = delta
            .iter()
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();

        // Halving line search: never accept an objective increase.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let mut trial = nodes.clone();
            for (i, &id) in var_ids.iter().enumerate() {
                let node = trial.get_mut(&id).expect("var id exists");
                node.pose = Pose2::new(
                    node.pose.x + scale * delta[i][0],
                    node.pose.y + scale * delta[i][1],
                    node.pose.theta + scale * delta[i][2],
                );
            }
            let trial_obj = objective_of(&trial, &graph.edges);
            if trial_obj <= objective {
                nodes = trial;
                objective = trial_obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }

        if step_norm < SOLVER_STEP_TOL {
            converged = true;
            break;
        }
        if !accepted {
            // No descent direction left at this scale; report the residual.
            break;
        }
    }

    Ok(Solution {
        poses: nodes.iter().map(|(&id, n)| (id, n.pose)).collect(),
        converged,
        iterations,
        initial_objective,
        final_objective: objective,
    })
}

/// Merge two graphs with a loop closure between `pk` (in `gi`) and `pj`
/// (in `gj`); the edge information is the inverse of `covariance`. Adding the
/// identical closure again returns an unchanged edge set.
pub fn add_loop_closure(
    gi: &PoseGraph,
    gj: &PoseGraph,
    pk: NodeId,
    pj: NodeId,
    relative: Pose2,
    covariance: &Mat3,
) -> Result<PoseGraph, GraphError> {
    if !gi.contains(pk) {
        return Err(GraphError::UnknownNode(pk));
    }
    if !gj.contains(pj) {
        return Err(GraphError::UnknownNode(pj));
    }
    let information = covariance.inverse_spd().ok_or(GraphError::BadCovariance)?;
    let mut merged = gi.merge(gj);
    let edge = Edge {
        from: pk,
        to: pj,
        relative,
        information,
        kind: EdgeKind::InterLoop,
    };
    if !merged.edges.iter().any(|e| e.same_constraint(&edge)) {
        merged.add_edge(edge)?;
    }
    Ok(merged)
}

/// Outcome of a successful stitch: the merged, solved graph.
#[derive(Debug, Clone)]
pub struct Stitch {
    pub graph: PoseGraph,
    pub closures_added: usize,
    pub solution: Solution,
}

/// Map stitching: score the incoming scan against every own scan, attempt
/// relative-pose estimation above the similarity gate, add every successful
/// closure, then solve the joint graph once. Returns None when no closure
/// passes both gates.
pub fn stitch_map(
    gi: &PoseGraph,
    gj: &PoseGraph,
    zj: &CompressedScan,
    own_scans: &[CompressedScan],
    s_star: f64,
    reg: &RegistrationParams,
) -> Result<Option<Stitch>, GraphError> {
    if !gj.contains(zj.node_id) {
        return Err(GraphError::UnknownNode(zj.node_id));
    }
    let mut merged: Option<PoseGraph> = None;
    let mut closures = 0;
    for zk in own_scans {
        if !gi.contains(zk.node_id) {
            return Err(GraphError::UnknownNode(zk.node_id));
        }
        let s = similarity_score(zj, zk);
        if s <= s_star {
            continue;
        }
        // estimate(zj, zk) maps zj's landmarks into zk's frame, which is the
        // relative pose of node pj expressed at node pk.
        let Some((relative, cov)) = estimate_relative_pose(zj, zk, reg) else {
            continue;
        };
        let base = merged.as_ref().unwrap_or(gi);
        merged = Some(add_loop_closure(
            base, gj, zk.node_id, zj.node_id, relative, &cov,
        )?);
        closures += 1;
    }
    let Some(mut graph) = merged else {
        return Ok(None);
    };
    let solution = solve_pose_graph(&graph)?;
    graph.apply_solution(&solution.poses);
    Ok(Some(Stitch {
        graph,
        closures_added: closures,
        solution,
    }))
}

/// Duplicate-stitch guard: key of an attempted (own scan, remote scan) pair.
pub fn attempt_key(own: &CompressedScan, remote: &CompressedScan) -> (NodeId, NodeId) {
    (own.node_id, remote.node_id)
}

/// Odometry information matrix default: diag(100, 100, 400).
pub fn default_odometry_information() -> Mat3 {
    Mat3::diag(100.0, 100.0, 400.0)
}

pub type AttemptedPairs = BTreeSet<(NodeId, NodeId)>;
