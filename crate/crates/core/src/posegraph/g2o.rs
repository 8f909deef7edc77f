//! Plain-text g2o-style pose-graph io.
//!
//! `VERTEX_SE2 id x y theta`, `EDGE_SE2 i j dx dy dtheta i11 i12 i13 i22 i23
//! i33`, plus the conventional `FIX id` line for the anchor. Node owners are
//! recovered from the id packing on read; edges between consecutive
//! same-robot ids read back as odometry, inter-robot edges as inter-robot
//! loop closures, the rest as intra-robot loop closures.

use std::io::{BufRead, Write};

use crate::geom::Pose2;
use crate::linalg::Mat3;
use crate::posegraph::{Edge, EdgeKind, GraphError, NodeId, PoseGraph};

pub fn write_g2o<W: Write>(graph: &PoseGraph, mut w: W) -> std::io::Result<()> {
    for (id, node) in graph.nodes() {
        writeln!(
            w,
            "VERTEX_SE2 {} {} {} {}",
            id.raw(),
            node.pose.x,
            node.pose.y,
            node.pose.theta
        )?;
    }
    writeln!(w, "FIX {}", graph.anchor().raw())?;
    for e in graph.edges() {
        let i = &e.information.0;
        writeln!(
            w,
            "EDGE_SE2 {} {} {} {} {} {} {} {} {} {} {}",
            e.from.raw(),
            e.to.raw(),
            e.relative.x,
            e.relative.y,
            e.relative.theta,
            i[0][0],
            i[0][1],
            i[0][2],
            i[1][1],
            i[1][2],
            i[2][2]
        )?;
    }
    Ok(())
}

pub fn read_g2o<R: BufRead>(r: R) -> Result<PoseGraph, GraphError> {
    let mut graph: Option<PoseGraph> = None;
    let mut fix: Option<NodeId> = None;
    let mut pending_edges: Vec<Edge> = Vec::new();

    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| GraphError::G2oParse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        let tag = tok.next().expect("non-empty line");
        let parse = |s: Option<&str>, what: &str| -> Result<f64, GraphError> {
            s.and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| GraphError::G2oParse {
                    line: lineno + 1,
                    msg: format!("missing or invalid {what}"),
                })
        };
        let parse_id = |s: Option<&str>, what: &str| -> Result<NodeId, GraphError> {
            s.and_then(|v| v.parse::<u64>().ok())
                .map(NodeId::from_raw)
                .ok_or_else(|| GraphError::G2oParse {
                    line: lineno + 1,
                    msg: format!("missing or invalid {what}"),
                })
        };
        match tag {
            "VERTEX_SE2" => {
                let id = parse_id(tok.next(), "vertex id")?;
                let x = parse(tok.next(), "x")?;
                let y = parse(tok.next(), "y")?;
                let theta = parse(tok.next(), "theta")?;
                let pose = Pose2::new(x, y, theta);
                match &mut graph {
                    None => graph = Some(PoseGraph::new(id, id.robot(), pose)),
                    Some(g) => g.add_node(id, id.robot(), pose)?,
                }
            }
            "EDGE_SE2" => {
                let from = parse_id(tok.next(), "edge from")?;
                let to = parse_id(tok.next(), "edge to")?;
                let dx = parse(tok.next(), "dx")?;
                let dy = parse(tok.next(), "dy")?;
                let dth = parse(tok.next(), "dtheta")?;
                let i11 = parse(tok.next(), "i11")?;
                let i12 = parse(tok.next(), "i12")?;
                let i13 = parse(tok.next(), "i13")?;
                let i22 = parse(tok.next(), "i22")?;
                let i23 = parse(tok.next(), "i23")?;
                let i33 = parse(tok.next(), "i33")?;
                let information = Mat3([[i11, i12, i13], [i12, i22, i23], [i13, i23, i33]]);
                let kind = if from.robot() != to.robot() {
                    EdgeKind::InterLoop
                } else if to.seq() == from.seq() + 1 {
                    EdgeKind::Odometry
                } else {
                    EdgeKind::IntraLoop
                };
                pending_edges.push(Edge {
                    from,
                    to,
                    relative: Pose2::new(dx, dy, dth),
                    information,
                    kind,
                });
            }
            "FIX" => {
                fix = Some(parse_id(tok.next(), "fix id")?);
            }
            other => {
                return Err(GraphError::G2oParse {
                    line: lineno + 1,
                    msg: format!("unknown record '{other}'"),
                })
            }
        }
    }

    let mut graph = graph.ok_or(GraphError::G2oParse {
        line: 0,
        msg: "no vertices".into(),
    })?;
    for e in pending_edges {
        graph.add_edge(e)?;
    }
    if let Some(anchor) = fix {
        if !graph.contains(anchor) {
            return Err(GraphError::MissingAnchor(anchor));
        }
        graph.anchor = anchor;
    }
    Ok(graph)
}
