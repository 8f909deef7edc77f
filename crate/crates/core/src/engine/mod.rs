//! Deterministic tick loop composing sense, fuse, stitch, plan and move per
//! robot, plus scenario-level metrics.

pub mod scenario;

pub use scenario::{parse_scenario, EngineParams, RobotConfig, ScenarioConfig, ScenarioError};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::belief::{Detection, OccupancyBelief};
use crate::comms::{Bus, BusError, BusStats, Envelope, Topic, TraceRecord};
use crate::geom::{Cell, Pose2};
use crate::planner::{
    decmcts_round, DecMctsTree, KnownMap, TeamPlanDistribution, TeamRobot, TeamSpec,
    TrajectoryPlan, VisCache,
};
use crate::posegraph::{
    default_odometry_information, stitch_map, AttemptedPairs, CompressedScan, GraphError, NodeId,
    PoseGraph, RegistrationParams,
};
use crate::rng::{derive, gauss, Stream};
use crate::wire;
use crate::world::{
    confirm_targets, sample_detections, visible_cells, GridWorld, RobotState, SensorKind,
    SensorSpec, WorldError,
};
use crate::{RobotId, TargetId};

/// Scan landmarks are taken from obstacle cells within this range cap, then
/// downsampled to the nearest few dozen points.
const MAPPING_RANGE_CAP: f64 = 60.0;
const MAX_SCAN_LANDMARKS: usize = 64;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario: {0}")]
    Config(#[from] ScenarioError),
    #[error("robot {robot} at tick {tick}: {source}")]
    World {
        robot: RobotId,
        tick: u64,
        source: WorldError,
    },
    #[error("robot {robot} at tick {tick}: {source}")]
    Graph {
        robot: RobotId,
        tick: u64,
        source: GraphError,
    },
    #[error("bus error at tick {tick}: {source}")]
    Bus { tick: u64, source: BusError },
}

/// Per-robot slice of one tick's metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotMetrics {
    pub robot: u16,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    /// Position error of the dead-reckoned/stitched estimate, metres.
    pub est_err_pos: f64,
    /// Heading error of the estimate, radians.
    pub est_err_theta: f64,
    pub entropy_bits: f64,
    /// Acquisition value of the plan the robot is executing.
    pub plan_utility: f64,
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub tick: u64,
    pub robots: Vec<RobotMetrics>,
    pub confirmed_cum: usize,
    pub msgs_sent: u64,
    pub msgs_delivered: u64,
    pub msgs_dropped: u64,
}

/// Event log entries (JSON lines).
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Comms(TraceRecord),
    Confirmation {
        tick: u64,
        robot: u16,
        target: u32,
        cell: (u16, u16),
    },
    ConfirmMissed {
        tick: u64,
        robot: u16,
        target: u32,
    },
    Stitch {
        tick: u64,
        robot: u16,
        with: u16,
        closures: usize,
        objective_before: f64,
        objective_after: f64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfirmationRecord {
    pub target: u32,
    pub tick: u64,
    pub by: u16,
}

/// End-of-run summary (written as summary.json by the CLI).
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub format: u32,
    pub scenario: String,
    pub seed: u64,
    pub ticks_run: u64,
    pub n_targets: usize,
    pub confirmations: Vec<ConfirmationRecord>,
    pub all_confirmed: bool,
    /// Targets that survived a failed confirmation attempt and were
    /// confirmed later anyway.
    pub revalidated: Vec<u32>,
    /// Targets that had a failed attempt and were never confirmed.
    pub missed_unconfirmed: Vec<u32>,
    pub messages: BusStats,
    pub final_entropy_bits: Vec<(u16, f64)>,
    pub final_pose_error: Vec<(u16, f64, f64)>,
}

struct Agent {
    state: RobotState,
    start_pose: Pose2,
    belief: OccupancyBelief,
    known: KnownMap,
    graph: PoseGraph,
    own_scans: Vec<CompressedScan>,
    attempted: AttemptedPairs,
    latest_graphs: BTreeMap<RobotId, PoseGraph>,
    pending_scans: BTreeMap<RobotId, VecDeque<CompressedScan>>,
    /// Pose estimate in the robot's own frame (origin = its start pose).
    pose_estimate: Pose2,
    node_seq: u32,
    det_seq: u64,
    msg_seq: u64,
    plan: Option<TrajectoryPlan>,
    plan_step: usize,
    plan_utility: f64,
    own_dist: Vec<(TrajectoryPlan, f64)>,
    received_dists: BTreeMap<RobotId, Vec<(TrajectoryPlan, f64)>>,
    confirmed_known: BTreeSet<TargetId>,
    recent_dets: VecDeque<Detection>,
    outgoing_confirms: Vec<(TargetId, Cell)>,
    rng_scout: ChaCha8Rng,
    rng_confirm: ChaCha8Rng,
    rng_odom: ChaCha8Rng,
    rng_planner: ChaCha8Rng,
    rng_scan: ChaCha8Rng,
}

impl Agent {
    fn id(&self) -> RobotId {
        self.state.robot_id
    }

    fn current_cell(&self, world: &GridWorld) -> Cell {
        world
            .cell_of_point(self.state.pose.x, self.state.pose.y)
            .expect("robot pose stays in bounds")
    }

    fn current_node(&self) -> NodeId {
        NodeId::new(self.id(), self.node_seq)
    }

    /// Estimate expressed in the world frame for metrics.
    fn estimate_in_world(&self) -> Pose2 {
        self.start_pose.compose(&self.pose_estimate)
    }
}

/// The simulation: world ground truth, agents, bus and bookkeeping.
pub struct Simulation {
    pub cfg: ScenarioConfig,
    world: GridWorld,
    team: TeamSpec,
    agents: Vec<Agent>,
    bus: Bus,
    cache: VisCache,
    channel: (f64, f64),
    tick: u64,
    confirmed: BTreeMap<TargetId, (u64, RobotId)>,
    missed_once: BTreeSet<TargetId>,
    events: Vec<Event>,
    reg_params: RegistrationParams,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, EngineError> {
        let world = cfg.world.clone();
        let root = cfg.engine.seed;

        let mut team = TeamSpec::new();
        let mut agents = Vec::new();
        for (i, rc) in cfg.robots.iter().enumerate() {
            let id = RobotId(i as u16);
            let sensors = rc.sensors();
            let state = RobotState {
                robot_id: id,
                class: rc.class,
                pose: world.pose_at_cell(rc.start, rc.theta),
                sensors: sensors.clone(),
            };
            state
                .validate()
                .map_err(|source| EngineError::World { robot: id, tick: 0, source })?;
            team.insert(
                id,
                TeamRobot {
                    class: rc.class,
                    scout: sensors
                        .iter()
                        .find(|s| s.kind == SensorKind::ScoutLongRange)
                        .copied(),
                    confirm: sensors
                        .iter()
                        .find(|s| s.kind == SensorKind::TaskConfirm)
                        .copied(),
                },
            );
            let start_pose = state.pose;
            agents.push(Agent {
                state,
                start_pose,
                belief: OccupancyBelief::new(world.width(), world.height(), cfg.engine.prior),
                known: KnownMap::unknown(world.width(), world.height()),
                graph: PoseGraph::new(NodeId::new(id, 0), id, Pose2::identity()),
                own_scans: Vec::new(),
                attempted: AttemptedPairs::new(),
                latest_graphs: BTreeMap::new(),
                pending_scans: BTreeMap::new(),
                pose_estimate: Pose2::identity(),
                node_seq: 0,
                det_seq: 0,
                msg_seq: 0,
                plan: None,
                plan_step: 0,
                plan_utility: 0.0,
                own_dist: Vec::new(),
                received_dists: BTreeMap::new(),
                confirmed_known: BTreeSet::new(),
                recent_dets: VecDeque::new(),
                outgoing_confirms: Vec::new(),
                rng_scout: derive(root, id.0 as u64, Stream::ScoutSensor, 0),
                rng_confirm: derive(root, id.0 as u64, Stream::ConfirmSensor, 0),
                rng_odom: derive(root, id.0 as u64, Stream::Odometry, 0),
                rng_planner: derive(root, id.0 as u64, Stream::Planner, 0),
                rng_scan: derive(root, id.0 as u64, Stream::ScanNoise, 0),
            });
        }

        // Cold start: every robot assumes teammates stay at their start cells.
        let horizon = cfg.planner.horizon;
        let starts: Vec<(RobotId, Cell)> = cfg
            .robots
            .iter()
            .enumerate()
            .map(|(i, rc)| (RobotId(i as u16), rc.start))
            .collect();
        for agent in &mut agents {
            for &(rid, start) in &starts {
                if rid != agent.id() {
                    agent.received_dists.insert(
                        rid,
                        vec![(TrajectoryPlan::stay_in_place(rid, start, horizon), 1.0)],
                    );
                }
            }
        }

        // Planning channel: the scout confusion model (uniform across scouts
        // by construction in scenario files).
        let channel = team
            .values()
            .find_map(|r| r.scout.as_ref())
            .map(|s| (s.p_detect, s.p_false))
            .unwrap_or((0.9, 0.05));

        let bus = Bus::new(cfg.comms.clone(), agents.iter().map(|a| a.id()), root);

        Ok(Self {
            world,
            team,
            agents,
            bus,
            cache: VisCache::new(),
            channel,
            tick: 0,
            confirmed: BTreeMap::new(),
            missed_once: BTreeSet::new(),
            events: Vec::new(),
            reg_params: RegistrationParams::default(),
            cfg,
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn world(&self) -> &GridWorld {
        &self.world
    }

    pub fn n_robots(&self) -> usize {
        self.agents.len()
    }

    pub fn robot_state(&self, i: usize) -> &RobotState {
        &self.agents[i].state
    }

    pub fn belief_of(&self, i: usize) -> &OccupancyBelief {
        &self.agents[i].belief
    }

    pub fn graph_of(&self, i: usize) -> &PoseGraph {
        &self.agents[i].graph
    }

    pub fn confirmed_targets(&self) -> &BTreeMap<TargetId, (u64, RobotId)> {
        &self.confirmed
    }

    pub fn all_confirmed(&self) -> bool {
        self.confirmed.len() == self.world.targets().len()
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Advance one tick: sense, fuse own, broadcast, deliver (fuse remote,
    /// stitch), plan, avoid, move, record.
    pub fn step(&mut self) -> Result<MetricsRecord, EngineError> {
        let tick = self.tick;
        let n = self.agents.len();

        // Phases 1-2: sense, update own belief, queue broadcasts.
        for i in 0..n {
            self.sense_and_broadcast(i, tick)?;
        }

        // Phase 3: deliver; fuse remote detections; stitch received scans.
        let delivered = self.bus.deliver(tick);
        for (receiver, envelopes) in delivered {
            let idx = receiver.0 as usize;
            for env in envelopes {
                self.receive(idx, &env, tick)?;
            }
        }

        // Phase 4: robots due for planning run a decentralised MCTS round.
        if tick % self.cfg.engine.plan_period == 0 {
            for i in 0..n {
                self.replan(i, tick);
            }
        }

        // Phases 5-6: local avoidance, movement, odometry.
        for i in 0..n {
            self.advance_robot(i)?;
        }

        // Phase 7: metrics.
        for trace in self.bus.take_trace() {
            self.events.push(Event::Comms(trace));
        }
        let stats = self.bus.stats();
        let record = MetricsRecord {
            tick,
            robots: self
                .agents
                .iter()
                .map(|a| {
                    let est = a.estimate_in_world();
                    RobotMetrics {
                        robot: a.id().0,
                        x: a.state.pose.x,
                        y: a.state.pose.y,
                        theta: a.state.pose.theta,
                        est_err_pos: est.translation_distance(&a.state.pose),
                        est_err_theta: est.rotation_distance(&a.state.pose),
                        entropy_bits: a.belief.entropy_bits(),
                        plan_utility: a.plan_utility,
                    }
                })
                .collect(),
            confirmed_cum: self.confirmed.len(),
            msgs_sent: stats.sent,
            msgs_delivered: stats.delivered,
            msgs_dropped: stats.dropped,
        };
        self.tick += 1;
        Ok(record)
    }

    fn sense_and_broadcast(&mut self, i: usize, tick: u64) -> Result<(), EngineError> {
        let id = self.agents[i].id();
        let wrap_world = |source| EngineError::World { robot: id, tick, source };

        // Sense with every sensor; every visible cell yields one detection.
        let sensors = self.agents[i].state.sensors.clone();
        let mut batch: Vec<Detection> = Vec::new();
        for sensor in &sensors {
            let agent = &mut self.agents[i];
            let rng = match sensor.kind {
                SensorKind::ScoutLongRange => &mut agent.rng_scout,
                SensorKind::TaskConfirm => &mut agent.rng_confirm,
            };
            let dets = sample_detections(
                &self.world,
                &agent.state,
                sensor,
                tick,
                &mut agent.det_seq,
                rng,
            )
            .map_err(wrap_world)?;
            batch.extend(dets);
        }

        // The batch enumerates exactly the visible cells: reveal the
        // obstacles among them on the known map.
        {
            let agent = &mut self.agents[i];
            for det in &batch {
                if self.world.is_obstacle(det.cell) {
                    agent.known.mark_obstacle(det.cell);
                }
            }
        }

        // Confirmations: ground-truth correct, each dropped with failure_rate.
        let failure_rate = self.cfg.engine.failure_rate;
        let agent = &mut self.agents[i];
        let confirmed_now =
            confirm_targets(&self.world, &agent.state, failure_rate, &mut agent.rng_confirm)
                .map_err(wrap_world)?;

        // Failed attempts: targets in confirmation coverage that did not come
        // back. Used for the perception-failure robustness bookkeeping.
        if failure_rate > 0.0 {
            let confirm_sensor = agent
                .state
                .sensor_of_kind(SensorKind::TaskConfirm)
                .copied()
                .expect("all classes carry a confirmation sensor");
            let in_range =
                visible_cells(&self.world, &agent.state.pose, &confirm_sensor).map_err(wrap_world)?;
            for &(t, cell) in self.world.targets() {
                if in_range.binary_search(&cell).is_ok()
                    && !confirmed_now.contains(&t)
                    && !self.confirmed.contains_key(&t)
                {
                    if !self.missed_once.contains(&t) {
                        self.events.push(Event::ConfirmMissed {
                            tick,
                            robot: id.0,
                            target: t.0,
                        });
                    }
                    self.missed_once.insert(t);
                }
            }
        }

        for t in confirmed_now {
            let cell = self
                .world
                .targets()
                .iter()
                .find(|(tid, _)| *tid == t)
                .map(|&(_, c)| c)
                .expect("confirmed target exists");
            let agent = &mut self.agents[i];
            if agent.confirmed_known.insert(t) {
                agent.belief.confirm_cell(cell).expect("target in bounds");
                agent.outgoing_confirms.push((t, cell));
            }
            self.confirmed.entry(t).or_insert_with(|| {
                self.events.push(Event::Confirmation {
                    tick,
                    robot: id.0,
                    target: t.0,
                    cell: (cell.x, cell.y),
                });
                (tick, id)
            });
        }

        // Fuse own detections immediately.
        let agent = &mut self.agents[i];
        for det in &batch {
            agent.belief.update(det).expect("own detections in bounds");
            agent.recent_dets.push_back(*det);
            while agent.recent_dets.len() > self.cfg.engine.digest_size {
                agent.recent_dets.pop_front();
            }
        }

        // Broadcast detections plus any confirmation announcements.
        let confirmations = std::mem::take(&mut self.agents[i].outgoing_confirms);
        if !batch.is_empty() || !confirmations.is_empty() {
            let payload = wire::encode_detections(&wire::DetectionsMsg {
                detections: batch,
                confirmations,
            });
            self.broadcast(i, Topic::Detections, payload, tick)?;
        }

        // Periodic digest: re-broadcast the recent detection window so the
        // dedup ledger can absorb losses.
        let digest_due = self.cfg.engine.digest_period > 0
            && tick > 0
            && tick % self.cfg.engine.digest_period == 0;
        if digest_due && !self.agents[i].recent_dets.is_empty() {
            let payload = wire::encode_detections(&wire::DetectionsMsg {
                detections: self.agents[i].recent_dets.iter().copied().collect(),
                confirmations: Vec::new(),
            });
            self.broadcast(i, Topic::Detections, payload, tick)?;
        }

        // Periodic compressed scan + pose graph for map stitching.
        if tick % self.cfg.engine.stitch_period == 0 {
            let scan = self.take_scan(i);
            self.agents[i].own_scans.push(scan.clone());
            let graph_payload = wire::encode_pose_graph(&self.agents[i].graph);
            self.broadcast(i, Topic::PoseGraph, graph_payload, tick)?;
            let scan_payload = wire::encode_scan(&scan);
            self.broadcast(i, Topic::Scan, scan_payload, tick)?;
        }

        // Periodic plan-distribution exchange.
        if tick % self.cfg.planner.exchange_period == 0 && !self.agents[i].own_dist.is_empty() {
            let mut dist = TeamPlanDistribution::empty(tick);
            dist.per_robot
                .insert(id, self.agents[i].own_dist.clone());
            let payload = wire::encode_plan_dist(&dist);
            self.broadcast(i, Topic::PlanDist, payload, tick)?;
        }

        Ok(())
    }

    /// Landmarks for stitching: obstacle-cell centres visible within the
    /// mapping range, expressed in the robot's sensor frame, optionally
    /// noisy, downsampled to the nearest `MAX_SCAN_LANDMARKS`.
    fn take_scan(&mut self, i: usize) -> CompressedScan {
        let agent = &mut self.agents[i];
        let mapping_sensor = agent
            .state
            .sensor_of_kind(SensorKind::ScoutLongRange)
            .or_else(|| agent.state.sensor_of_kind(SensorKind::TaskConfirm))
            .copied()
            .expect("every robot carries a sensor");
        let range = mapping_sensor.max_range.min(MAPPING_RANGE_CAP);
        let probe = SensorSpec {
            max_range: range,
            fov: crate::world::Fov::Omnidirectional,
            ..mapping_sensor
        };
        let cells =
            visible_cells(&self.world, &agent.state.pose, &probe).expect("pose in bounds");
        let sigma = self.cfg.engine.landmark_sigma;
        let mut landmarks: Vec<(f64, (f64, f64))> = cells
            .into_iter()
            .filter(|&c| self.world.is_obstacle(c))
            .map(|c| {
                let world_pt = self.world.cell_center(c);
                let local = agent.state.pose.inverse_transform_point(world_pt);
                let r2 = local.0 * local.0 + local.1 * local.1;
                (r2, local)
            })
            .collect();
        landmarks.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
        landmarks.truncate(MAX_SCAN_LANDMARKS);
        let mut points: Vec<(f64, f64)> = landmarks
            .into_iter()
            .map(|(_, p)| {
                (
                    p.0 + gauss(&mut agent.rng_scan, sigma),
                    p.1 + gauss(&mut agent.rng_scan, sigma),
                )
            })
            .collect();
        points.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        CompressedScan::new(agent.id(), agent.current_node(), points)
    }

    fn broadcast(
        &mut self,
        i: usize,
        topic: Topic,
        payload: Vec<u8>,
        tick: u64,
    ) -> Result<(), EngineError> {
        let agent = &mut self.agents[i];
        let env = Envelope {
            msg_id: (agent.id(), agent.msg_seq),
            topic,
            payload,
            sent_tick: tick,
        };
        agent.msg_seq += 1;
        self.bus
            .broadcast(env)
            .map_err(|source| EngineError::Bus { tick, source })
    }

    fn receive(&mut self, i: usize, env: &Envelope, tick: u64) -> Result<(), EngineError> {
        match env.topic {
            Topic::Detections => {
                if let Ok(msg) = wire::decode_detections(&env.payload) {
                    let agent = &mut self.agents[i];
                    agent
                        .belief
                        .fuse_remote(msg.detections.iter())
                        .expect("broadcast detections in bounds");
                    for (t, cell) in msg.confirmations {
                        if agent.confirmed_known.insert(t) {
                            agent.belief.confirm_cell(cell).expect("target in bounds");
                        }
                    }
                }
            }
            Topic::PoseGraph => {
                if let Ok(graph) = wire::decode_pose_graph(&env.payload) {
                    let sender = env.sender();
                    self.agents[i].latest_graphs.insert(sender, graph);
                    // Retry scans that were waiting for a graph that contains
                    // their node.
                    let pending: Vec<CompressedScan> = {
                        let agent = &mut self.agents[i];
                        let queue = agent.pending_scans.entry(sender).or_default();
                        let graph = &agent.latest_graphs[&sender];
                        let mut ready = Vec::new();
                        queue.retain(|scan| {
                            if graph.contains(scan.node_id) {
                                ready.push(scan.clone());
                                false
                            } else {
                                true
                            }
                        });
                        ready
                    };
                    for scan in pending {
                        self.try_stitch(i, &scan, tick)?;
                    }
                }
            }
            Topic::Scan => {
                if let Ok(scan) = wire::decode_scan(&env.payload) {
                    let sender = env.sender();
                    let has_node = self.agents[i]
                        .latest_graphs
                        .get(&sender)
                        .map(|g| g.contains(scan.node_id))
                        .unwrap_or(false);
                    if has_node {
                        self.try_stitch(i, &scan, tick)?;
                    } else {
                        let queue = self.agents[i].pending_scans.entry(sender).or_default();
                        queue.push_back(scan);
                        while queue.len() > 8 {
                            queue.pop_front();
                        }
                    }
                }
            }
            Topic::PlanDist => {
                if let Ok(dist) = wire::decode_plan_dist(&env.payload) {
                    let agent = &mut self.agents[i];
                    for (robot, plans) in dist.per_robot {
                        if robot != agent.id() && !plans.is_empty() {
                            agent.received_dists.insert(robot, plans);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Map stitching against an incoming scan: scans whose (own, remote) pair
    /// was already attempted are skipped; a success replaces the merged graph
    /// copy and refreshes the pose estimate.
    fn try_stitch(&mut self, i: usize, zj: &CompressedScan, tick: u64) -> Result<(), EngineError> {
        let id = self.agents[i].id();
        let sender = zj.origin_robot;
        let gj = match self.agents[i].latest_graphs.get(&sender) {
            Some(g) => g.clone(),
            None => return Ok(()),
        };
        if !gj.contains(zj.node_id) {
            return Ok(());
        }
        let fresh: Vec<CompressedScan> = self.agents[i]
            .own_scans
            .iter()
            .filter(|zk| {
                !self.agents[i]
                    .attempted
                    .contains(&(zk.node_id, zj.node_id))
            })
            .cloned()
            .collect();
        if fresh.is_empty() {
            return Ok(());
        }
        for zk in &fresh {
            self.agents[i].attempted.insert((zk.node_id, zj.node_id));
        }
        let agent = &mut self.agents[i];
        let before = agent.graph.objective();
        let outcome = stitch_map(
            &agent.graph,
            &gj,
            zj,
            &fresh,
            self.cfg.engine.s_star,
            &self.reg_params,
        )
        .map_err(|source| EngineError::Graph { robot: id, tick, source })?;
        if let Some(stitch) = outcome {
            agent.graph = stitch.graph;
            let own_latest = agent.current_node();
            if let Some(pose) = agent.graph.pose_of(own_latest) {
                agent.pose_estimate = pose;
            }
            self.events.push(Event::Stitch {
                tick,
                robot: id.0,
                with: sender.0,
                closures: stitch.closures_added,
                objective_before: before,
                objective_after: stitch.solution.final_objective,
            });
        }
        Ok(())
    }

    fn replan(&mut self, i: usize, tick: u64) {
        let agent = &mut self.agents[i];
        let root = agent.current_cell(&self.world);
        let mut tree = DecMctsTree::new(root, self.cfg.planner.horizon);
        let mut received = TeamPlanDistribution::empty(tick);
        for (robot, plans) in &agent.received_dists {
            received.per_robot.insert(*robot, plans.clone());
        }
        let result = decmcts_round(
            agent.id(),
            &agent.belief,
            &mut tree,
            &received,
            &self.world,
            &self.team,
            &agent.known,
            self.channel,
            &self.cfg.planner,
            &self.cache,
            &mut agent.rng_planner,
        );
        agent.plan = Some(result.best.clone());
        agent.plan_step = 0;
        agent.plan_utility = result.best_return;
        agent.own_dist = result.distribution;
    }

    fn advance_robot(&mut self, i: usize) -> Result<(), EngineError> {
        let agent = &mut self.agents[i];
        let current = agent.current_cell(&self.world);
        let mut target = agent
            .plan
            .as_ref()
            .and_then(|p| p.waypoints.get(agent.plan_step))
            .copied()
            .unwrap_or(current);
        // Waypoint skipping after a detour can leave the plan non-adjacent to
        // the actual position; drop it and hold until the next replan.
        if !current.adjacent8_or_equal(&target) {
            agent.plan = None;
            target = current;
        }

        let executed = local_avoid(&self.world, current, target);
        // Advance along the plan when the waypoint is reached, or skip a
        // waypoint that ground truth shows to be unreachable.
        if executed == target || self.world.is_obstacle(target) {
            if agent.plan.is_some() {
                agent.plan_step += 1;
            }
            if self.world.is_obstacle(target) {
                agent.known.mark_obstacle(target);
            }
        }

        let prev_pose = agent.state.pose;
        let heading = if executed != current {
            let (ex, ey) = self.world.cell_center(executed);
            (ey - prev_pose.y).atan2(ex - prev_pose.x)
        } else {
            prev_pose.theta
        };
        agent.state.pose = self.world.pose_at_cell(executed, heading);

        // Odometry: the true relative motion with Gaussian noise, appended as
        // a graph edge; the dead-reckoned estimate composes the same noisy
        // increment.
        let true_rel = prev_pose.between(&agent.state.pose);
        let noisy = Pose2::new(
            true_rel.x + gauss(&mut agent.rng_odom, self.cfg.engine.odometry_sigma_xy),
            true_rel.y + gauss(&mut agent.rng_odom, self.cfg.engine.odometry_sigma_xy),
            true_rel.theta + gauss(&mut agent.rng_odom, self.cfg.engine.odometry_sigma_theta),
        );
        let id = agent.id();
        let seq = agent.node_seq;
        agent
            .graph
            .extend_odometry(id, seq, noisy, default_odometry_information())
            .map_err(|source| EngineError::Graph { robot: id, tick: self.tick, source })?;
        agent.node_seq += 1;
        agent.pose_estimate = agent.pose_estimate.compose(&noisy);
        Ok(())
    }
}

/// Local obstacle avoidance: execute the waypoint when the ground-truth local
/// patch shows it free; otherwise take the free neighbour closest to it;
/// otherwise stay. Never enters an obstacle, even when the global plan
/// (built on a possibly stale known map) is wrong.
pub fn local_avoid(world: &GridWorld, current: Cell, waypoint: Cell) -> Cell {
    debug_assert!(current.adjacent8_or_equal(&waypoint));
    if waypoint == current {
        return current;
    }
    if world.in_bounds(waypoint) && !world.is_obstacle(waypoint) {
        return waypoint;
    }
    let (wx, wy) = world.cell_center(waypoint);
    let mut best: Option<(f64, Cell)> = None;
    for dy in -1i32..=1 {
        for dx in -1i32..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let x = current.x as i32 + dx;
            let y = current.y as i32 + dy;
            if x < 0 || y < 0 || x >= world.width() as i32 || y >= world.height() as i32 {
                continue;
            }
            let cell = Cell::new(x as u16, y as u16);
            if cell == waypoint || world.is_obstacle(cell) {
                continue;
            }
            let (cx, cy) = world.cell_center(cell);
            let d = (cx - wx).powi(2) + (cy - wy).powi(2);
            let better = match best {
                None => true,
                Some((bd, bc)) => d < bd || (d == bd && cell < bc),
            };
            if better {
                best = Some((d, cell));
            }
        }
    }
    best.map(|(_, c)| c).unwrap_or(current)
}

/// Full run output.
pub struct RunOutcome {
    pub metrics: Vec<MetricsRecord>,
    pub events: Vec<Event>,
    pub summary: Summary,
    pub simulation: Simulation,
}

/// Step until the tick budget is exhausted or every target is confirmed.
pub fn run(cfg: ScenarioConfig) -> Result<RunOutcome, EngineError> {
    let mut sim = Simulation::new(cfg)?;
    let mut metrics = Vec::new();
    while sim.tick() < sim.cfg.engine.ticks && !sim.all_confirmed() {
        metrics.push(sim.step()?);
    }
    let events = sim.take_events();
    let summary = summarise(&sim, &metrics);
    Ok(RunOutcome {
        metrics,
        events,
        summary,
        simulation: sim,
    })
}

fn summarise(sim: &Simulation, metrics: &[MetricsRecord]) -> Summary {
    let confirmations: Vec<ConfirmationRecord> = sim
        .confirmed
        .iter()
        .map(|(t, &(tick, by))| ConfirmationRecord {
            target: t.0,
            tick,
            by: by.0,
        })
        .collect();
    let revalidated: Vec<u32> = sim
        .missed_once
        .iter()
        .filter(|t| sim.confirmed.contains_key(t))
        .map(|t| t.0)
        .collect();
    let missed_unconfirmed: Vec<u32> = sim
        .missed_once
        .iter()
        .filter(|t| !sim.confirmed.contains_key(t))
        .map(|t| t.0)
        .collect();
    Summary {
        format: 1,
        scenario: sim.cfg.name.clone(),
        seed: sim.cfg.engine.seed,
        ticks_run: metrics.len() as u64,
        n_targets: sim.world.targets().len(),
        all_confirmed: sim.all_confirmed(),
        confirmations,
        revalidated,
        missed_unconfirmed,
        messages: sim.bus.stats(),
        final_entropy_bits: sim
            .agents
            .iter()
            .map(|a| (a.id().0, a.belief.entropy_bits()))
            .collect(),
        final_pose_error: sim
            .agents
            .iter()
            .map(|a| {
                let est = a.estimate_in_world();
                (
                    a.id().0,
                    est.translation_distance(&a.state.pose),
                    est.rotation_distance(&a.state.pose),
                )
            })
            .collect(),
    }
}

/// Metrics CSV: header plus one row per tick; per-robot columns are grouped
/// by robot id. Byte-deterministic for identical runs.
pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], mut w: W) -> std::io::Result<()> {
    let n = records.first().map(|r| r.robots.len()).unwrap_or(0);
    write!(w, "tick")?;
    for i in 0..n {
        write!(
            w,
            ",r{i}_x,r{i}_y,r{i}_theta,r{i}_est_err_pos,r{i}_est_err_theta,r{i}_entropy_bits,r{i}_plan_utility"
        )?;
    }
    writeln!(w, ",confirmed_cum,msgs_sent,msgs_delivered,msgs_dropped")?;
    for r in records {
        write!(w, "{}", r.tick)?;
        for m in &r.robots {
            write!(
                w,
                ",{},{},{},{},{},{},{}",
                m.x, m.y, m.theta, m.est_err_pos, m.est_err_theta, m.entropy_bits, m.plan_utility
            )?;
        }
        writeln!(
            w,
            ",{},{},{},{}",
            r.confirmed_cum, r.msgs_sent, r.msgs_delivered, r.msgs_dropped
        )?;
    }
    Ok(())
}

/// Events as JSON lines.
pub fn write_events_jsonl<W: Write>(events: &[Event], mut w: W) -> std::io::Result<()> {
    for e in events {
        let line = serde_json::to_string(e).expect("events serialise");
        writeln!(w, "{line}")?;
    }
    Ok(())
}
