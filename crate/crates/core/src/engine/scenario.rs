//! Scenario configuration: a sectioned key/value text format describing the
//! world, robots, comms, planner and engine parameters of one reproducible
//! run.
//!
//! Comment lines start with '#'. Inline comments are not supported because
//! '#' is the obstacle character in ASCII map rows.
//!
//! ```text
//! [world]
//! width = 12
//! height = 12
//! cell_size = 5.0
//! # optional ASCII rows, one per grid row, y = 0 first; '#' = obstacle
//! row = ....########
//! # obstacle_rect = x, y, w, h and target = id, x, y are repeatable
//! obstacle_rect = 3, 4, 2, 2
//! target = 1, 10, 10
//!
//! # one [robot] section per robot; class = scout_and_task | task_only
//! [robot]
//! class = scout_and_task
//! start = 2, 2
//! theta = 0.0
//! scout_range = 100.0
//! confirm_range = 10.0
//! p_detect = 0.9
//! p_false = 0.05
//! range_decay = 0.5
//! # confirm_fov in radians, or "omni"
//! confirm_fov = 1.5707963
//!
//! [comms]
//! drop_prob = 0.0
//! latency = 0, 0
//! # bandwidth in bytes/tick, or "inf"
//! bandwidth = inf
//!
//! [planner]
//! delta = 0.1
//! horizon = 8
//! mcts_iterations = 128
//! c_ucb = 1.0
//! k_dist = 3
//! exchange_period = 4
//!
//! [engine]
//! seed = 7
//! ticks = 600
//! failure_rate = 0.0
//! stitch_period = 20
//! plan_period = 4
//! odometry_sigma_xy = 0.02
//! odometry_sigma_theta = 0.005
//! landmark_sigma = 0.0
//! prior = 0.01
//! digest_period = 50
//! digest_size = 200
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comms::{LinkModel, LinkParams};
use crate::geom::Cell;
use crate::planner::PlannerConfig;
use crate::world::{Fov, GridWorld, RobotClass, SensorKind, SensorSpec};
use crate::TargetId;

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {msg}")]
pub struct ScenarioError {
    pub line: usize,
    pub msg: String,
}

impl ScenarioError {
    fn new(line: usize, msg: impl Into<String>) -> Self {
        Self {
            line,
            msg: msg.into(),
        }
    }
}

/// One robot's declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub class: RobotClass,
    pub start: Cell,
    pub theta: f64,
    pub scout_range: f64,
    pub confirm_range: f64,
    pub p_detect: f64,
    pub p_false: f64,
    pub range_decay: f64,
    /// None = omnidirectional confirmation sensor.
    pub confirm_fov: Option<f64>,
}

impl RobotConfig {
    pub fn sensors(&self) -> Vec<SensorSpec> {
        let mut out = Vec::new();
        if self.class == RobotClass::ScoutAndTask {
            out.push(SensorSpec {
                kind: SensorKind::ScoutLongRange,
                max_range: self.scout_range,
                fov: Fov::Omnidirectional,
                p_detect: self.p_detect,
                p_false: self.p_false,
                range_decay: self.range_decay,
            });
        }
        out.push(SensorSpec {
            kind: SensorKind::TaskConfirm,
            max_range: self.confirm_range,
            fov: match self.confirm_fov {
                None => Fov::Omnidirectional,
                Some(angle) => Fov::Cone { angle },
            },
            p_detect: 1.0,
            p_false: 0.0,
            range_decay: 0.0,
        });
        out
    }
}

/// Engine-level knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    pub seed: u64,
    pub ticks: u64,
    pub failure_rate: f64,
    pub stitch_period: u64,
    pub plan_period: u64,
    pub odometry_sigma_xy: f64,
    pub odometry_sigma_theta: f64,
    pub landmark_sigma: f64,
    pub prior: f64,
    pub digest_period: u64,
    pub digest_size: usize,
    /// Similarity gate for map stitching.
    pub s_star: f64,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            seed: 0,
            ticks: 600,
            failure_rate: 0.0,
            stitch_period: 20,
            plan_period: 4,
            odometry_sigma_xy: 0.02,
            odometry_sigma_theta: 0.005,
            landmark_sigma: 0.0,
            prior: 0.01,
            digest_period: 50,
            digest_size: 200,
            s_star: 0.75,
        }
    }
}

/// A fully validated scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub world: GridWorld,
    pub robots: Vec<RobotConfig>,
    pub comms: LinkModel,
    pub planner: PlannerConfig,
    pub engine: EngineParams,
}

struct RawSection {
    name: String,
    line: usize,
    entries: Vec<(String, String, usize)>,
}

fn split_sections(text: &str) -> Result<Vec<RawSection>, ScenarioError> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        // Comments are whole lines only: '#' appears inside ASCII map rows.
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ScenarioError::new(lineno, "unterminated section header"))?
                .trim()
                .to_string();
            sections.push(RawSection {
                name,
                line: lineno,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ScenarioError::new(lineno, "expected 'key = value'"))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| ScenarioError::new(lineno, "key/value before any [section]"))?;
        section
            .entries
            .push((key.trim().to_string(), value.trim().to_string(), lineno));
    }
    Ok(sections)
}

struct SectionReader<'a> {
    section: &'a RawSection,
    used: Vec<bool>,
}

impl<'a> SectionReader<'a> {
    fn new(section: &'a RawSection) -> Self {
        Self {
            used: vec![false; section.entries.len()],
            section,
        }
    }

    fn get(&mut self, key: &str) -> Option<(&'a str, usize)> {
        for (i, (k, v, line)) in self.section.entries.iter().enumerate() {
            if k == key && !self.used[i] {
                self.used[i] = true;
                return Some((v, *line));
            }
        }
        None
    }

    fn get_all(&mut self, key: &str) -> Vec<(&'a str, usize)> {
        let mut out = Vec::new();
        for (i, (k, v, line)) in self.section.entries.iter().enumerate() {
            if k == key {
                self.used[i] = true;
                out.push((v.as_str(), *line));
            }
        }
        out
    }

    fn finish(self) -> Result<(), ScenarioError> {
        for (i, (k, _, line)) in self.section.entries.iter().enumerate() {
            if !self.used[i] {
                return Err(ScenarioError::new(
                    *line,
                    format!("unknown key '{k}' in [{}]", self.section.name),
                ));
            }
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, line: usize, what: &str) -> Result<T, ScenarioError> {
    v.trim()
        .parse::<T>()
        .map_err(|_| ScenarioError::new(line, format!("invalid {what}: '{v}'")))
}

fn parse_pair<T: std::str::FromStr + Copy>(
    v: &str,
    line: usize,
    what: &str,
) -> Result<(T, T), ScenarioError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(ScenarioError::new(line, format!("{what} expects two values")));
    }
    Ok((
        parse_num(parts[0], line, what)?,
        parse_num(parts[1], line, what)?,
    ))
}

fn require<'a>(
    reader: &mut SectionReader<'a>,
    key: &str,
    section_line: usize,
) -> Result<(&'a str, usize), ScenarioError> {
    reader
        .get(key)
        .ok_or_else(|| ScenarioError::new(section_line, format!("missing required key '{key}'")))
}

/// Parse and validate a scenario file.
pub fn parse_scenario(text: &str, name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let sections = split_sections(text)?;

    let mut world: Option<GridWorld> = None;
    let mut robots: Vec<(RobotConfig, usize)> = Vec::new();
    let mut comms = LinkModel::default();
    let mut planner = PlannerConfig::default();
    let mut engine = EngineParams::default();
    let mut seen: BTreeSet<&str> = BTreeSet::new();

    for section in &sections {
        match section.name.as_str() {
            "world" => {
                if !seen.insert("world") {
                    return Err(ScenarioError::new(section.line, "duplicate [world] section"));
                }
                world = Some(parse_world(section)?);
            }
            "robot" => {
                let mut r = SectionReader::new(section);
                let (class_str, class_line) = require(&mut r, "class", section.line)?;
                let class = match class_str {
                    "scout_and_task" => RobotClass::ScoutAndTask,
                    "task_only" => RobotClass::TaskOnly,
                    other => {
                        return Err(ScenarioError::new(
                            class_line,
                            format!("unknown robot class '{other}' (scout_and_task | task_only)"),
                        ))
                    }
                };
                let (start_str, start_line) = require(&mut r, "start", section.line)?;
                let (sx, sy): (u16, u16) = parse_pair(start_str, start_line, "start")?;
                let theta = match r.get("theta") {
                    Some((v, l)) => parse_num(v, l, "theta")?,
                    None => 0.0,
                };
                let scout_range = match r.get("scout_range") {
                    Some((v, l)) => parse_num(v, l, "scout_range")?,
                    None => 100.0,
                };
                let confirm_range = match r.get("confirm_range") {
                    Some((v, l)) => parse_num(v, l, "confirm_range")?,
                    None => 10.0,
                };
                let p_detect = match r.get("p_detect") {
                    Some((v, l)) => parse_num(v, l, "p_detect")?,
                    None => 0.9,
                };
                let p_false = match r.get("p_false") {
                    Some((v, l)) => parse_num(v, l, "p_false")?,
                    None => 0.05,
                };
                let range_decay = match r.get("range_decay") {
                    Some((v, l)) => parse_num(v, l, "range_decay")?,
                    None => 0.5,
                };
                let confirm_fov = match r.get("confirm_fov") {
                    Some(("omni", _)) => None,
                    Some((v, l)) => Some(parse_num(v, l, "confirm_fov")?),
                    None => Some(std::f64::consts::FRAC_PI_2),
                };
                r.finish()?;
                let cfg = RobotConfig {
                    class,
                    start: Cell::new(sx, sy),
                    theta,
                    scout_range,
                    confirm_range,
                    p_detect,
                    p_false,
                    range_decay,
                    confirm_fov,
                };
                for sensor in cfg.sensors() {
                    sensor
                        .validate()
                        .map_err(|e| ScenarioError::new(section.line, e.to_string()))?;
                }
                robots.push((cfg, section.line));
            }
            "comms" => {
                if !seen.insert("comms") {
                    return Err(ScenarioError::new(section.line, "duplicate [comms] section"));
                }
                let mut r = SectionReader::new(section);
                let mut params = LinkParams::default();
                if let Some((v, l)) = r.get("drop_prob") {
                    params.drop_prob = parse_num(v, l, "drop_prob")?;
                }
                if let Some((v, l)) = r.get("latency") {
                    params.latency = parse_pair(v, l, "latency")?;
                }
                if let Some((v, l)) = r.get("bandwidth") {
                    params.bandwidth = if v == "inf" {
                        None
                    } else {
                        Some(parse_num(v, l, "bandwidth")?)
                    };
                }
                params
                    .validate()
                    .map_err(|e| ScenarioError::new(section.line, e))?;
                r.finish()?;
                comms = LinkModel::uniform(params);
            }
            "planner" => {
                if !seen.insert("planner") {
                    return Err(ScenarioError::new(section.line, "duplicate [planner] section"));
                }
                let mut r = SectionReader::new(section);
                if let Some((v, l)) = r.get("delta") {
                    planner.delta = parse_num(v, l, "delta")?;
                }
                if let Some((v, l)) = r.get("horizon") {
                    planner.horizon = parse_num(v, l, "horizon")?;
                }
                if let Some((v, l)) = r.get("mcts_iterations") {
                    planner.mcts_iterations = parse_num(v, l, "mcts_iterations")?;
                }
                if let Some((v, l)) = r.get("c_ucb") {
                    planner.c_ucb = parse_num(v, l, "c_ucb")?;
                }
                if let Some((v, l)) = r.get("k_dist") {
                    planner.k_dist = parse_num(v, l, "k_dist")?;
                }
                if let Some((v, l)) = r.get("exchange_period") {
                    planner.exchange_period = parse_num(v, l, "exchange_period")?;
                }
                planner
                    .validate()
                    .map_err(|e| ScenarioError::new(section.line, e.to_string()))?;
                r.finish()?;
            }
            "engine" => {
                if !seen.insert("engine") {
                    return Err(ScenarioError::new(section.line, "duplicate [engine] section"));
                }
                let mut r = SectionReader::new(section);
                if let Some((v, l)) = r.get("seed") {
                    engine.seed = parse_num(v, l, "seed")?;
                }
                if let Some((v, l)) = r.get("ticks") {
                    engine.ticks = parse_num(v, l, "ticks")?;
                }
                if let Some((v, l)) = r.get("failure_rate") {
                    engine.failure_rate = parse_num(v, l, "failure_rate")?;
                    if !(0.0..=1.0).contains(&engine.failure_rate) {
                        return Err(ScenarioError::new(l, "failure_rate must be in [0,1]"));
                    }
                }
                if let Some((v, l)) = r.get("stitch_period") {
                    engine.stitch_period = parse_num(v, l, "stitch_period")?;
                    if engine.stitch_period == 0 {
                        return Err(ScenarioError::new(l, "stitch_period must be >= 1"));
                    }
                }
                if let Some((v, l)) = r.get("plan_period") {
                    engine.plan_period = parse_num(v, l, "plan_period")?;
                    if engine.plan_period == 0 {
                        return Err(ScenarioError::new(l, "plan_period must be >= 1"));
                    }
                }
                if let Some((v, l)) = r.get("odometry_sigma_xy") {
                    engine.odometry_sigma_xy = parse_num(v, l, "odometry_sigma_xy")?;
                }
                if let Some((v, l)) = r.get("odometry_sigma_theta") {
                    engine.odometry_sigma_theta = parse_num(v, l, "odometry_sigma_theta")?;
                }
                if let Some((v, l)) = r.get("landmark_sigma") {
                    engine.landmark_sigma = parse_num(v, l, "landmark_sigma")?;
                }
                if let Some((v, l)) = r.get("prior") {
                    engine.prior = parse_num(v, l, "prior")?;
                    if !(engine.prior > 0.0 && engine.prior < 1.0) {
                        return Err(ScenarioError::new(l, "prior must be in (0,1)"));
                    }
                }
                if let Some((v, l)) = r.get("digest_period") {
                    engine.digest_period = parse_num(v, l, "digest_period")?;
                }
                if let Some((v, l)) = r.get("digest_size") {
                    engine.digest_size = parse_num(v, l, "digest_size")?;
                }
                if let Some((v, l)) = r.get("s_star") {
                    engine.s_star = parse_num(v, l, "s_star")?;
                }
                r.finish()?;
            }
            other => {
                return Err(ScenarioError::new(
                    section.line,
                    format!("unknown section [{other}]"),
                ));
            }
        }
    }

    let world = world.ok_or_else(|| ScenarioError::new(0, "missing [world] section"))?;
    if robots.is_empty() {
        return Err(ScenarioError::new(0, "at least one [robot] section required"));
    }
    for (robot, line) in &robots {
        if !world.in_bounds(robot.start) {
            return Err(ScenarioError::new(
                *line,
                format!(
                    "robot start ({}, {}) out of bounds",
                    robot.start.x, robot.start.y
                ),
            ));
        }
        if world.is_obstacle(robot.start) {
            return Err(ScenarioError::new(
                *line,
                format!(
                    "robot start ({}, {}) is on an obstacle",
                    robot.start.x, robot.start.y
                ),
            ));
        }
    }

    Ok(ScenarioConfig {
        name: name.to_string(),
        world,
        robots: robots.into_iter().map(|(r, _)| r).collect(),
        comms,
        planner,
        engine,
    })
}

fn parse_world(section: &RawSection) -> Result<GridWorld, ScenarioError> {
    let mut r = SectionReader::new(section);
    let (w_str, w_line) = require(&mut r, "width", section.line)?;
    let width: u16 = parse_num(w_str, w_line, "width")?;
    let (h_str, h_line) = require(&mut r, "height", section.line)?;
    let height: u16 = parse_num(h_str, h_line, "height")?;
    if width == 0 || height == 0 {
        return Err(ScenarioError::new(w_line, "world dimensions must be positive"));
    }
    let cell_size = match r.get("cell_size") {
        Some((v, l)) => parse_num(v, l, "cell_size")?,
        None => 1.0,
    };
    let seed = match r.get("rng_seed") {
        Some((v, l)) => parse_num(v, l, "rng_seed")?,
        None => 0,
    };

    let mut obstacles = vec![false; width as usize * height as usize];
    let rows = r.get_all("row");
    if !rows.is_empty() {
        if rows.len() != height as usize {
            return Err(ScenarioError::new(
                rows[0].1,
                format!("expected {height} 'row' entries, found {}", rows.len()),
            ));
        }
        for (y, (row, line)) in rows.iter().enumerate() {
            if row.chars().count() != width as usize {
                return Err(ScenarioError::new(
                    *line,
                    format!("row must have exactly {width} characters"),
                ));
            }
            for (x, ch) in row.chars().enumerate() {
                match ch {
                    '#' => obstacles[y * width as usize + x] = true,
                    '.' => {}
                    other => {
                        return Err(ScenarioError::new(
                            *line,
                            format!("row characters must be '.' or '#', found '{other}'"),
                        ))
                    }
                }
            }
        }
    }
    for (rect, line) in r.get_all("obstacle_rect") {
        let parts: Vec<&str> = rect.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(ScenarioError::new(line, "obstacle_rect expects x, y, w, h"));
        }
        let x: u16 = parse_num(parts[0], line, "obstacle_rect x")?;
        let y: u16 = parse_num(parts[1], line, "obstacle_rect y")?;
        let w: u16 = parse_num(parts[2], line, "obstacle_rect w")?;
        let h: u16 = parse_num(parts[3], line, "obstacle_rect h")?;
        if x + w > width || y + h > height {
            return Err(ScenarioError::new(line, "obstacle_rect exceeds world bounds"));
        }
        for yy in y..y + h {
            for xx in x..x + w {
                obstacles[yy as usize * width as usize + xx as usize] = true;
            }
        }
    }

    let mut targets = Vec::new();
    for (t, line) in r.get_all("target") {
        let parts: Vec<&str> = t.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(ScenarioError::new(line, "target expects id, x, y"));
        }
        let id: u32 = parse_num(parts[0], line, "target id")?;
        let x: u16 = parse_num(parts[1], line, "target x")?;
        let y: u16 = parse_num(parts[2], line, "target y")?;
        targets.push((TargetId(id), Cell::new(x, y)));
    }
    r.finish()?;

    GridWorld::new(width, height, cell_size, obstacles, targets, seed)
        .map_err(|e| ScenarioError::new(section.line, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[world]
width = 8
height = 8
cell_size = 2.0
target = 0, 6, 6

[robot]
class = scout_and_task
start = 1, 1
scout_range = 10.0
confirm_range = 4.0

[engine]
seed = 3
ticks = 50
";

    #[test]
    fn minimal_scenario_parses() {
        let cfg = parse_scenario(MINIMAL, "minimal").unwrap();
        assert_eq!(cfg.world.width(), 8);
        assert_eq!(cfg.world.targets().len(), 1);
        assert_eq!(cfg.robots.len(), 1);
        assert_eq!(cfg.engine.seed, 3);
        assert_eq!(cfg.engine.ticks, 50);
        // Defaults hold where unset.
        assert_eq!(cfg.planner.horizon, 8);
        assert_eq!(cfg.comms.default.drop_prob, 0.0);
    }

    #[test]
    fn ascii_rows_define_obstacles() {
        let text = "\
[world]
width = 4
height = 3
row = ....
row = .##.
row = ....

[robot]
class = task_only
start = 0, 0
";
        let cfg = parse_scenario(text, "t").unwrap();
        assert!(cfg.world.is_obstacle(Cell::new(1, 1)));
        assert!(cfg.world.is_obstacle(Cell::new(2, 1)));
        assert!(!cfg.world.is_obstacle(Cell::new(0, 0)));
    }

    #[test]
    fn errors_are_line_anchored() {
        let bad_row = "\
[world]
width = 4
height = 2
row = ....
row = .!..

[robot]
class = task_only
start = 0, 0
";
        let err = parse_scenario(bad_row, "t").unwrap_err();
        assert_eq!(err.line, 5);

        let bad_class = "\
[world]
width = 4
height = 4

[robot]
class = flying_sorcerer
start = 0, 0
";
        let err = parse_scenario(bad_class, "t").unwrap_err();
        assert_eq!(err.line, 6);

        let unknown_key = "\
[world]
width = 4
height = 4
wobble = 3

[robot]
class = task_only
start = 0, 0
";
        let err = parse_scenario(unknown_key, "t").unwrap_err();
        assert_eq!(err.line, 4);
        assert!(err.msg.contains("wobble"));
    }

    #[test]
    fn semantic_errors_checked() {
        let start_on_obstacle = "\
[world]
width = 4
height = 4
obstacle_rect = 0, 0, 2, 2

[robot]
class = task_only
start = 1, 1
";
        let err = parse_scenario(start_on_obstacle, "t").unwrap_err();
        assert!(err.msg.contains("obstacle"));

        let target_on_obstacle = "\
[world]
width = 4
height = 4
obstacle_rect = 0, 0, 2, 2
target = 0, 1, 1

[robot]
class = task_only
start = 3, 3
";
        let err = parse_scenario(target_on_obstacle, "t").unwrap_err();
        assert!(err.msg.contains("obstacle"));

        let no_robot = "\
[world]
width = 4
height = 4
";
        let err = parse_scenario(no_robot, "t").unwrap_err();
        assert!(err.msg.contains("robot"));
    }

    #[test]
    fn comms_and_planner_sections() {
        let text = "\
[world]
width = 4
height = 4

[robot]
class = scout_and_task
start = 0, 0

[comms]
drop_prob = 0.25
latency = 1, 3
bandwidth = 512

[planner]
delta = 0.2
horizon = 4
";
        let cfg = parse_scenario(text, "t").unwrap();
        assert_eq!(cfg.comms.default.drop_prob, 0.25);
        assert_eq!(cfg.comms.default.latency, (1, 3));
        assert_eq!(cfg.comms.default.bandwidth, Some(512));
        assert_eq!(cfg.planner.delta, 0.2);
        assert_eq!(cfg.planner.horizon, 4);
    }

    #[test]
    fn bad_probability_rejected() {
        let text = "\
[world]
width = 4
height = 4

[robot]
class = scout_and_task
start = 0, 0
p_false = 0.95
";
        let err = parse_scenario(text, "t").unwrap_err();
        assert!(err.msg.contains("p_detect") || err.msg.contains("uninformative"));
    }
}
