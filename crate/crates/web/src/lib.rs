//! Browser bindings for the simulator: a tick-by-tick mission playback, a
//! belief-fusion explorer and a map-stitching demo. All entry points return
//! JSON strings; the page parses and draws them on canvases.

use rand::Rng;
use wasm_bindgen::prelude::*;

use scoutsim_core::belief::{Detection, OccupancyBelief, Outcome};
use scoutsim_core::engine::{parse_scenario, Simulation};
use scoutsim_core::geom::{Cell, Pose2};
use scoutsim_core::posegraph::{
    default_odometry_information, stitch_map, CompressedScan, NodeId, PoseGraph,
    RegistrationParams,
};
use scoutsim_core::rng::{derive, gauss, Stream};
use scoutsim_core::world::{RobotClass, SensorKind};
use scoutsim_core::RobotId;

const PRESETS: &[(&str, &str)] = &[
    ("station", include_str!("../../../scenarios/station.scn")),
    ("airbase", include_str!("../../../scenarios/airbase.scn")),
    ("reference", include_str!("../../../scenarios/reference20.scn")),
    ("minimal", include_str!("../../../scenarios/minimal.scn")),
];

fn preset_text(name: &str) -> Result<&'static str, String> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| format!("unknown preset '{name}'"))
}

#[wasm_bindgen]
pub fn preset_names() -> String {
    let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
    serde_json::to_string(&names).expect("serialise")
}

/// One running mission that the page advances tick by tick.
#[wasm_bindgen]
pub struct SimDemo {
    sim: Simulation,
}

#[wasm_bindgen]
impl SimDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(preset: &str, seed: u64) -> Result<SimDemo, String> {
        let text = preset_text(preset)?;
        let mut cfg = parse_scenario(text, preset)
            .map_err(|e| e.to_string())?;
        cfg.engine.seed = seed;
        let sim = Simulation::new(cfg).map_err(|e| e.to_string())?;
        Ok(SimDemo { sim })
    }

    pub fn width(&self) -> u16 {
        self.sim.world().width()
    }

    pub fn height(&self) -> u16 {
        self.sim.world().height()
    }

    pub fn cell_size(&self) -> f64 {
        self.sim.world().cell_size()
    }

    pub fn done(&self) -> bool {
        self.sim.all_confirmed() || self.sim.tick() >= self.sim.cfg.engine.ticks
    }

    /// Static world geometry, fetched once.
    pub fn world_json(&self) -> String {
        let world = self.sim.world();
        let obstacles: Vec<u8> = world.obstacles().iter().map(|&b| b as u8).collect();
        let targets: Vec<serde_json::Value> = world
            .targets()
            .iter()
            .map(|&(id, c)| serde_json::json!({"id": id.0, "x": c.x, "y": c.y}))
            .collect();
        serde_json::json!({
            "width": world.width(),
            "height": world.height(),
            "cell_size": world.cell_size(),
            "obstacles": obstacles,
            "targets": targets,
        })
        .to_string()
    }

    /// Advance one tick and return the frame state.
    pub fn tick(&mut self) -> Result<String, String> {
        if !self.done() {
            self.sim
                .step()
                .map_err(|e| e.to_string())?;
        }
        Ok(self.frame_json())
    }

    pub fn frame_json(&self) -> String {
        let world = self.sim.world();
        let robots: Vec<serde_json::Value> = (0..self.sim.n_robots())
            .map(|i| {
                let s = self.sim.robot_state(i);
                serde_json::json!({
                    "id": s.robot_id.0,
                    "x": s.pose.x,
                    "y": s.pose.y,
                    "theta": s.pose.theta,
                    "scout": s.class == RobotClass::ScoutAndTask,
                })
            })
            .collect();
        let belief = self.sim.belief_of(0);
        let mut probs = Vec::with_capacity(world.n_cells());
        for y in 0..world.height() {
            for x in 0..world.width() {
                let p = belief.posterior_prob(Cell::new(x, y)).expect("in bounds");
                probs.push((p * 1000.0).round() / 1000.0);
            }
        }
        let confirmed: Vec<u32> = self
            .sim
            .confirmed_targets()
            .keys()
            .map(|t| t.0)
            .collect();
        serde_json::json!({
            "tick": self.sim.tick(),
            "robots": robots,
            "belief": probs,
            "confirmed": confirmed,
            "entropy_bits": belief.entropy_bits(),
        })
        .to_string()
    }
}

/// Belief-fusion explorer: fold positive/negative detections (as clicked on
/// the page) into a fresh grid and return the posterior field.
///
/// `events_json`: [{"x": u16, "y": u16, "positive": bool}, ...]
#[wasm_bindgen]
pub fn fuse_posterior(
    width: u16,
    height: u16,
    prior: f64,
    p_detect: f64,
    p_false: f64,
    events_json: &str,
) -> Result<String, String> {
    if !(prior > 0.0 && prior < 1.0) {
        return Err("prior must be in (0,1)".to_string());
    }
    if !(p_false < p_detect) {
        return Err("p_detect must exceed p_false".to_string());
    }
    let events: Vec<serde_json::Value> =
        serde_json::from_str(events_json).map_err(|e| e.to_string())?;
    let mut belief = OccupancyBelief::new(width, height, prior);
    for (i, e) in events.iter().enumerate() {
        let x = e["x"].as_u64().unwrap_or(0) as u16;
        let y = e["y"].as_u64().unwrap_or(0) as u16;
        let positive = e["positive"].as_bool().unwrap_or(true);
        let det = Detection {
            origin_robot: RobotId(0),
            seq: i as u64,
            cell: Cell::new(x.min(width - 1), y.min(height - 1)),
            outcome: if positive { Outcome::Positive } else { Outcome::Negative },
            sensor_kind: SensorKind::ScoutLongRange,
            effective_p_detect: p_detect,
            p_false,
            tick: 0,
        };
        belief
            .update(&det)
            .map_err(|e| e.to_string())?;
    }
    let mut probs = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height {
        for x in 0..width {
            probs.push(belief.posterior_prob(Cell::new(x, y)).expect("in bounds"));
        }
    }
    Ok(serde_json::json!({
        "probs": probs,
        "entropy_bits": belief.entropy_bits(),
    })
    .to_string())
}

/// Map-stitching demo: two robots over a shared landmark field, exact
/// odometry, noisy scans; returns node positions before/after stitching
/// against the ground truth offset.
#[wasm_bindgen]
pub fn stitch_demo(seed: u64, landmark_sigma: f64) -> Result<String, String> {
    let mut rng = derive(seed, 0, Stream::ScanNoise, 40);
    let field: Vec<(f64, f64)> = (0..40)
        .map(|_| (rng.gen_range(0.0..30.0), rng.gen_range(0.0..30.0)))
        .collect();
    let offset_truth = Pose2::new(
        rng.gen_range(6.0..14.0),
        rng.gen_range(-8.0..-2.0),
        rng.gen_range(0.3..1.1),
    );

    let a_world = [
        Pose2::new(4.0, 5.0, 0.1),
        Pose2::new(7.0, 7.5, 0.4),
        Pose2::new(10.0, 9.0, -0.2),
        Pose2::new(13.0, 12.0, 0.3),
        Pose2::new(16.0, 14.0, 0.0),
    ];
    let b_own = [
        Pose2::new(0.0, 0.0, 0.0),
        Pose2::new(-3.0, 6.0, 0.5),
        Pose2::new(-6.0, 11.0, -0.3),
        Pose2::new(-9.0, 15.5, 0.2),
    ];

    let ra = RobotId(0);
    let rb = RobotId(1);
    let mut ga = PoseGraph::new(NodeId::new(ra, 0), ra, a_world[0]);
    for i in 1..a_world.len() {
        let rel = a_world[i - 1].between(&a_world[i]);
        ga.extend_odometry(ra, (i - 1) as u32, rel, default_odometry_information())
            .map_err(|e| e.to_string())?;
    }
    let mut gb = PoseGraph::new(NodeId::new(rb, 0), rb, b_own[0]);
    for i in 1..b_own.len() {
        let rel = b_own[i - 1].between(&b_own[i]);
        gb.extend_odometry(rb, (i - 1) as u32, rel, default_odometry_information())
            .map_err(|e| e.to_string())?;
    }

    let mut scan_at = |robot: RobotId, node: u32, world_pose: &Pose2| {
        let pts: Vec<(f64, f64)> = field
            .iter()
            .filter(|&&(x, y)| {
                ((x - world_pose.x).powi(2) + (y - world_pose.y).powi(2)).sqrt() <= 25.0
            })
            .map(|&(x, y)| {
                let local = world_pose.inverse_transform_point((x, y));
                (
                    local.0 + gauss(&mut rng, landmark_sigma),
                    local.1 + gauss(&mut rng, landmark_sigma),
                )
            })
            .collect();
        CompressedScan::new(robot, NodeId::new(robot, node), pts)
    };

    let a_scans: Vec<CompressedScan> = a_world
        .iter()
        .enumerate()
        .map(|(i, p)| scan_at(ra, i as u32, p))
        .collect();
    let b_scans: Vec<CompressedScan> = b_own
        .iter()
        .enumerate()
        .map(|(i, p)| scan_at(rb, i as u32, &offset_truth.compose(p)))
        .collect();

    let reg = RegistrationParams::default();
    let mut merged: Option<PoseGraph> = None;
    let mut closures = 0;
    for zj in &b_scans {
        let base = merged.as_ref().unwrap_or(&ga);
        if let Some(stitch) = stitch_map(base, &gb, zj, &a_scans, 0.75, &reg)
            .map_err(|e| e.to_string())?
        {
            closures += stitch.closures_added;
            merged = Some(stitch.graph);
        }
    }

    let pose_list = |poses: &[Pose2]| -> Vec<serde_json::Value> {
        poses
            .iter()
            .map(|p| serde_json::json!({"x": p.x, "y": p.y, "theta": p.theta}))
            .collect()
    };
    let b_world_truth: Vec<Pose2> = b_own.iter().map(|p| offset_truth.compose(p)).collect();
    let (b_after, est_offset, err) = match &merged {
        Some(g) => {
            let after: Vec<Pose2> = (0..b_own.len())
                .map(|i| g.pose_of(NodeId::new(rb, i as u32)).expect("merged node"))
                .collect();
            let est = after[0];
            let err = serde_json::json!({
                "pos": est.translation_distance(&offset_truth),
                "rot": est.rotation_distance(&offset_truth),
            });
            (after, Some(est), err)
        }
        None => (Vec::new(), None, serde_json::json!(null)),
    };

    Ok(serde_json::json!({
        "landmarks": field.iter().map(|&(x, y)| serde_json::json!([x, y])).collect::<Vec<_>>(),
        "a_nodes": pose_list(&a_world),
        "b_truth": pose_list(&b_world_truth),
        "b_stitched": pose_list(&b_after),
        "offset_truth": {"x": offset_truth.x, "y": offset_truth.y, "theta": offset_truth.theta},
        "offset_estimate": est_offset.map(|p| serde_json::json!({"x": p.x, "y": p.y, "theta": p.theta})),
        "closures": closures,
        "error": err,
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_play() {
        let names: Vec<String> = serde_json::from_str(&preset_names()).unwrap();
        assert!(names.contains(&"station".to_string()));
        let mut demo = SimDemo::new("minimal", 5).unwrap();
        let world: serde_json::Value = serde_json::from_str(&demo.world_json()).unwrap();
        assert_eq!(world["width"], 10);
        for _ in 0..30 {
            if demo.done() {
                break;
            }
            let frame: serde_json::Value =
                serde_json::from_str(&demo.tick().unwrap()).unwrap();
            assert!(frame["belief"].as_array().unwrap().len() == 100);
        }
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(SimDemo::new("atlantis", 1).is_err());
    }

    #[test]
    fn fuse_posterior_moves_probability() {
        let out = fuse_posterior(
            5,
            5,
            0.3,
            0.9,
            0.1,
            r#"[{"x":2,"y":2,"positive":true},{"x":0,"y":0,"positive":false}]"#,
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        let probs = v["probs"].as_array().unwrap();
        let centre = probs[2 * 5 + 2].as_f64().unwrap();
        let corner = probs[0].as_f64().unwrap();
        assert!(centre > 0.75, "positive evidence raises p: {centre}");
        assert!(corner < 0.1, "negative evidence lowers p: {corner}");
    }

    #[test]
    fn stitch_demo_recovers_offset() {
        let out = stitch_demo(3, 0.02).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v["closures"].as_u64().unwrap() >= 1);
        let err = v["error"]["pos"].as_f64().unwrap();
        assert!(err < 0.2, "offset error {err}");
    }
}
