//! Ground-truth environment, robot kinematics and stochastic sensor models.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{Detection, Outcome};
use crate::geom::{wrap_angle, Cell, Pose2};
use crate::{RobotId, TargetId};

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("cell size must be positive, got {0}")]
    BadCellSize(f64),
    #[error("target {id:?} at ({x}, {y}) is out of bounds")]
    TargetOutOfBounds { id: TargetId, x: u16, y: u16 },
    #[error("target {id:?} at ({x}, {y}) sits on an obstacle")]
    TargetOnObstacle { id: TargetId, x: u16, y: u16 },
    #[error("duplicate target id {0:?}")]
    DuplicateTargetId(TargetId),
    #[error("pose ({x:.2}, {y:.2}) outside the world")]
    PoseOutOfBounds { x: f64, y: f64 },
    #[error("sensor does not belong to robot {0:?}")]
    ForeignSensor(RobotId),
    #[error("robot {0:?} carries no confirmation sensor")]
    NoConfirmSensor(RobotId),
    #[error("sensor invariant violated: {0}")]
    BadSensor(String),
    #[error("robot {robot:?} sensor set does not match class {class:?}")]
    ClassSensorMismatch { robot: RobotId, class: RobotClass },
}

/// Which of the two sensing channels produced a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensorKind {
    /// Long-range omnidirectional detector: low confidence, wide coverage.
    ScoutLongRange,
    /// Short-range confirmation sensor: ground-truth-correct.
    TaskConfirm,
}

/// Field of view of a sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Fov {
    Omnidirectional,
    /// Cone of the given full angle (radians), centred on the robot heading.
    Cone { angle: f64 },
}

/// Stochastic confusion model for one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub kind: SensorKind,
    pub max_range: f64,
    pub fov: Fov,
    /// True-positive rate at a covered cell, before range decay.
    pub p_detect: f64,
    /// False-positive rate at a covered empty cell.
    pub p_false: f64,
    /// Linear decay: effective p_detect = p_detect * (1 - range_decay * r / max_range).
    pub range_decay: f64,
}

impl SensorSpec {
    /// Default long-range scout detector (about 100 m, omnidirectional).
    pub fn default_scout() -> Self {
        Self {
            kind: SensorKind::ScoutLongRange,
            max_range: 100.0,
            fov: Fov::Omnidirectional,
            p_detect: 0.9,
            p_false: 0.05,
            range_decay: 0.5,
        }
    }

    /// Default confirmation sensor (10 m cone of pi/2).
    pub fn default_confirm() -> Self {
        Self {
            kind: SensorKind::TaskConfirm,
            max_range: 10.0,
            fov: Fov::Cone {
                angle: std::f64::consts::FRAC_PI_2,
            },
            p_detect: 1.0,
            p_false: 0.0,
            range_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.max_range > 0.0) {
            return Err(WorldError::BadSensor(format!(
                "max_range must be positive, got {}",
                self.max_range
            )));
        }
        if !(self.p_detect > 0.0 && self.p_detect <= 1.0) {
            return Err(WorldError::BadSensor(format!(
                "p_detect must be in (0,1], got {}",
                self.p_detect
            )));
        }
        if !(0.0..1.0).contains(&self.p_false) {
            return Err(WorldError::BadSensor(format!(
                "p_false must be in [0,1), got {}",
                self.p_false
            )));
        }
        if !(0.0..=1.0).contains(&self.range_decay) {
            return Err(WorldError::BadSensor(format!(
                "range_decay must be in [0,1], got {}",
                self.range_decay
            )));
        }
        // The channel must stay informative at the far edge of coverage.
        if self.p_detect * (1.0 - self.range_decay) <= self.p_false {
            return Err(WorldError::BadSensor(format!(
                "channel uninformative at max range: p_detect {} * (1 - range_decay {}) <= p_false {}",
                self.p_detect, self.range_decay, self.p_false
            )));
        }
        if let Fov::Cone { angle } = self.fov {
            if !(angle > 0.0 && angle <= 2.0 * std::f64::consts::PI) {
                return Err(WorldError::BadSensor(format!(
                    "cone angle must be in (0, 2pi], got {angle}"
                )));
            }
        }
        Ok(())
    }
}

/// Mission class of a robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobotClass {
    /// Short-range confirmation only.
    TaskOnly,
    /// Long-range detection plus confirmation.
    ScoutAndTask,
}

/// Ground-truth state of one robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub robot_id: RobotId,
    pub class: RobotClass,
    pub pose: Pose2,
    pub sensors: Vec<SensorSpec>,
}

impl RobotState {
    pub fn validate(&self) -> Result<(), WorldError> {
        for s in &self.sensors {
            s.validate()?;
        }
        let has_scout = self.sensors.iter().any(|s| s.kind == SensorKind::ScoutLongRange);
        let has_confirm = self.sensors.iter().any(|s| s.kind == SensorKind::TaskConfirm);
        let ok = match self.class {
            RobotClass::ScoutAndTask => has_scout && has_confirm,
            RobotClass::TaskOnly => !has_scout && has_confirm,
        };
        if !ok {
            return Err(WorldError::ClassSensorMismatch {
                robot: self.robot_id,
                class: self.class,
            });
        }
        Ok(())
    }

    pub fn sensor_of_kind(&self, kind: SensorKind) -> Option<&SensorSpec> {
        self.sensors.iter().find(|s| s.kind == kind)
    }
}

/// Static planar grid world: obstacles and target placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    width: u16,
    height: u16,
    cell_size: f64,
    obstacles: Vec<bool>,
    targets: Vec<(TargetId, Cell)>,
    pub rng_seed: u64,
}

impl GridWorld {
    pub fn new(
        width: u16,
        height: u16,
        cell_size: f64,
        obstacles: Vec<bool>,
        mut targets: Vec<(TargetId, Cell)>,
        rng_seed: u64,
    ) -> Result<Self, WorldError> {
        if !(cell_size > 0.0) {
            return Err(WorldError::BadCellSize(cell_size));
        }
        assert_eq!(
            obstacles.len(),
            width as usize * height as usize,
            "obstacle grid size mismatch"
        );
        targets.sort_by_key(|(id, _)| *id);
        for w in targets.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(WorldError::DuplicateTargetId(w[0].0));
            }
        }
        let world = Self {
            width,
            height,
            cell_size,
            obstacles,
            targets,
            rng_seed,
        };
        for &(id, c) in &world.targets {
            if !world.in_bounds(c) {
                return Err(WorldError::TargetOutOfBounds { id, x: c.x, y: c.y });
            }
            if world.is_obstacle(c) {
                return Err(WorldError::TargetOnObstacle { id, x: c.x, y: c.y });
            }
        }
        Ok(world)
    }

    /// An empty world without obstacles or targets.
    pub fn open(width: u16, height: u16, cell_size: f64) -> Self {
        Self::new(
            width,
            height,
            cell_size,
            vec![false; width as usize * height as usize],
            Vec::new(),
            0,
        )
        .expect("open world is always valid")
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn n_cells(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn idx(&self, c: Cell) -> usize {
        c.y as usize * self.width as usize + c.x as usize
    }

    pub fn is_obstacle(&self, c: Cell) -> bool {
        self.obstacles[self.idx(c)]
    }

    pub fn obstacles(&self) -> &[bool] {
        &self.obstacles
    }

    pub fn targets(&self) -> &[(TargetId, Cell)] {
        &self.targets
    }

    pub fn target_at(&self, c: Cell) -> Option<TargetId> {
        self.targets.iter().find(|&&(_, tc)| tc == c).map(|&(id, _)| id)
    }

    /// Centre of a cell in metres.
    pub fn cell_center(&self, c: Cell) -> (f64, f64) {
        (
            (c.x as f64 + 0.5) * self.cell_size,
            (c.y as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell containing a metric point, if inside the world.
    pub fn cell_of_point(&self, x: f64, y: f64) -> Option<Cell> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let cx = (x / self.cell_size).floor() as u64;
        let cy = (y / self.cell_size).floor() as u64;
        if cx >= self.width as u64 || cy >= self.height as u64 {
            return None;
        }
        Some(Cell::new(cx as u16, cy as u16))
    }

    /// Pose placed at the centre of a cell.
    pub fn pose_at_cell(&self, c: Cell, theta: f64) -> Pose2 {
        let (x, y) = self.cell_center(c);
        Pose2::new(x, y, theta)
    }

    /// True when no obstacle cell lies strictly between `a` and `b` on the
    /// integer ray between their centres. The endpoints never block.
    pub fn line_of_sight(&self, a: Cell, b: Cell) -> bool {
        let (mut x0, mut y0) = (a.x as i32, a.y as i32);
        let (x1, y1) = (b.x as i32, b.y as i32);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            if (x0, y0) != (a.x as i32, a.y as i32) && (x0, y0) != (x1, y1) {
                let c = Cell::new(x0 as u16, y0 as u16);
                if self.is_obstacle(c) {
                    return false;
                }
            }
            if x0 == x1 && y0 == y1 {
                return true;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }
}

/// Cells covered by a sensor from a pose: in range, inside the field of view,
/// and with unobstructed straight-line visibility. Sorted ascending.
pub fn visible_cells(
    world: &GridWorld,
    pose: &Pose2,
    sensor: &SensorSpec,
) -> Result<Vec<Cell>, WorldError> {
    let origin = world
        .cell_of_point(pose.x, pose.y)
        .ok_or(WorldError::PoseOutOfBounds { x: pose.x, y: pose.y })?;

    let reach = (sensor.max_range / world.cell_size()).ceil() as i32;
    let x_lo = (origin.x as i32 - reach).max(0) as u16;
    let x_hi = ((origin.x as i32 + reach) as u16).min(world.width - 1);
    let y_lo = (origin.y as i32 - reach).max(0) as u16;
    let y_hi = ((origin.y as i32 + reach) as u16).min(world.height - 1);

    let mut out = Vec::new();
    for x in x_lo..=x_hi {
        for y in y_lo..=y_hi {
            let cell = Cell::new(x, y);
            let (cx, cy) = world.cell_center(cell);
            let r = ((cx - pose.x).powi(2) + (cy - pose.y).powi(2)).sqrt();
            if r > sensor.max_range {
                continue;
            }
            if let Fov::Cone { angle } = sensor.fov {
                if cell != origin {
                    let bearing = (cy - pose.y).atan2(cx - pose.x);
                    if wrap_angle(bearing - pose.theta).abs() > angle / 2.0 {
                        continue;
                    }
                }
            }
            if !world.line_of_sight(origin, cell) {
                continue;
            }
            out.push(cell);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Run one scan: every visible cell yields exactly one detection through the
/// sensor's confusion channel. Deterministic given the rng stream; `next_seq`
/// advances by the number of detections emitted.
pub fn sample_detections<R: Rng>(
    world: &GridWorld,
    state: &RobotState,
    sensor: &SensorSpec,
    tick: u64,
    next_seq: &mut u64,
    rng: &mut R,
) -> Result<Vec<Detection>, WorldError> {
    if !state.sensors.iter().any(|s| s == sensor) {
        return Err(WorldError::ForeignSensor(state.robot_id));
    }
    let cells = visible_cells(world, &state.pose, sensor)?;
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let (cx, cy) = world.cell_center(cell);
        let r = ((cx - state.pose.x).powi(2) + (cy - state.pose.y).powi(2)).sqrt();
        let eff_p = sensor.p_detect * (1.0 - sensor.range_decay * r / sensor.max_range);
        let target_here = world.target_at(cell).is_some();
        let p_positive = if target_here { eff_p } else { sensor.p_false };
        let outcome = if rng.gen_bool(p_positive.clamp(0.0, 1.0)) {
            Outcome::Positive
        } else {
            Outcome::Negative
        };
        out.push(Detection {
            origin_robot: state.robot_id,
            seq: *next_seq,
            cell,
            outcome,
            sensor_kind: sensor.kind,
            effective_p_detect: eff_p,
            p_false: sensor.p_false,
            tick,
        });
        *next_seq += 1;
    }
    Ok(out)
}

/// Ground-truth-correct confirmations: targets inside the confirmation
/// sensor's coverage, each independently dropped with `failure_rate`.
pub fn confirm_targets<R: Rng>(
    world: &GridWorld,
    state: &RobotState,
    failure_rate: f64,
    rng: &mut R,
) -> Result<Vec<TargetId>, WorldError> {
    let sensor = state
        .sensor_of_kind(SensorKind::TaskConfirm)
        .ok_or(WorldError::NoConfirmSensor(state.robot_id))?;
    let cells = visible_cells(world, &state.pose, sensor)?;
    let mut out = Vec::new();
    for &(id, cell) in world.targets() {
        if cells.binary_search(&cell).is_ok() && !rng.gen_bool(failure_rate.clamp(0.0, 1.0)) {
            out.push(id);
        }
    }
    Ok(out)
}
