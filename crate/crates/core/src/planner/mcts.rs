//! Decentralised MCTS: each robot searches its own trajectory tree while
//! sampling teammates' trajectories from the distributions they broadcast.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::belief::OccupancyBelief;
use crate::geom::Cell;
use crate::planner::{
    KnownMap, PlannerConfig, TeamPlanDistribution, TeamSpec, TrajectoryPlan, UtilityEvaluator,
    VisCache,
};
use crate::world::GridWorld;
use crate::RobotId;

/// Softmax temperature for the own-plan distribution over mean returns.
const DISTRIBUTION_TAU: f64 = 1.0;

#[derive(Debug, Clone)]
struct TreeNode {
    cell: Cell,
    depth: usize,
    parent: Option<usize>,
    children: Vec<usize>,
    /// Feasible moves not yet expanded, in randomised pop order.
    untried: Vec<Cell>,
    visits: u64,
    total_return: f64,
}

impl TreeNode {
    fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.total_return / self.visits as f64
        }
    }
}

/// Search tree over own waypoint prefixes, rooted at the robot's current cell.
#[derive(Debug, Clone)]
pub struct DecMctsTree {
    root_cell: Cell,
    horizon: usize,
    nodes: Vec<TreeNode>,
}

impl DecMctsTree {
    pub fn new(root_cell: Cell, horizon: usize) -> Self {
        Self {
            root_cell,
            horizon,
            nodes: Vec::new(),
        }
    }

    pub fn root_cell(&self) -> Cell {
        self.root_cell
    }

    /// True when the tree can be reused for a round from this cell at this
    /// horizon; callers rebuild otherwise.
    pub fn matches(&self, root_cell: Cell, horizon: usize) -> bool {
        self.root_cell == root_cell && self.horizon == horizon
    }

    fn path_from_root(&self, mut idx: usize) -> Vec<Cell> {
        let mut rev = Vec::new();
        loop {
            let node = &self.nodes[idx];
            rev.push(node.cell);
            match node.parent {
                Some(p) => idx = p,
                None => break,
            }
        }
        rev.pop(); // drop the root: waypoints start at the first move
        rev.reverse();
        rev
    }
}

/// Output of one planning round.
#[derive(Debug, Clone)]
pub struct RoundResult {
    /// Own distribution: up to k_dist plans with softmax probabilities over
    /// mean returns.
    pub distribution: Vec<(TrajectoryPlan, f64)>,
    pub best: TrajectoryPlan,
    /// Mean return of the best plan (the adopted plan's acquisition value
    /// under sampled teammate behaviour).
    pub best_return: f64,
    pub iterations_run: usize,
}

/// Feasible single-tick moves from a cell: the 8-connected neighbours that are
/// in bounds and not on a known obstacle, plus staying put. Sorted.
fn feasible_moves(world: &GridWorld, known: &KnownMap, from: Cell) -> Vec<Cell> {
    let mut out = Vec::with_capacity(9);
    for dy in -1i32..=1 {
        for dx in -1i32..=1 {
            let x = from.x as i32 + dx;
            let y = from.y as i32 + dy;
            if x < 0 || y < 0 || x >= world.width() as i32 || y >= world.height() as i32 {
                continue;
            }
            let cell = Cell::new(x as u16, y as u16);
            if cell != from && known.is_blocked(cell) {
                continue;
            }
            out.push(cell);
        }
    }
    out.sort_unstable();
    out
}

fn shuffled<R: Rng>(mut v: Vec<Cell>, rng: &mut R) -> Vec<Cell> {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
    v
}

/// Uniform-random feasible completion of a waypoint prefix to the horizon.
fn rollout_completion<R: Rng>(
    world: &GridWorld,
    known: &KnownMap,
    prefix: &[Cell],
    from: Cell,
    horizon: usize,
    rng: &mut R,
) -> Vec<Cell> {
    let mut waypoints = prefix.to_vec();
    let mut cur = from;
    while waypoints.len() < horizon {
        let moves = feasible_moves(world, known, cur);
        cur = moves[rng.gen_range(0..moves.len())];
        waypoints.push(cur);
    }
    waypoints
}

/// Draw one plan per teammate from the received distributions. Robots absent
/// from the exchange contribute their stay-in-place default, which the caller
/// encodes as an entry in `received`; truly unknown robots are skipped.
fn sample_teammates<'a, R: Rng>(
    own_id: RobotId,
    received: &'a TeamPlanDistribution,
    rng: &mut R,
) -> Vec<&'a TrajectoryPlan> {
    let mut out = Vec::new();
    for (&robot, plans) in &received.per_robot {
        if robot == own_id || plans.is_empty() {
            continue;
        }
        let draw: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = &plans[plans.len() - 1].0;
        for (plan, prob) in plans {
            acc += prob;
            if draw < acc {
                chosen = plan;
                break;
            }
        }
        out.push(chosen);
    }
    out
}

/// One decentralised planning round: `iterations` of UCT over the own
/// trajectory tree, scoring each completed own plan with the team acquisition
/// value under teammate plans sampled from `received`.
///
/// The returned distribution holds the top `k_dist` complete plans weighted
/// by exp(mean return); the best plan is the argmax. With a zero iteration
/// budget (or when no rollout completes a plan) the distribution falls back
/// to `k_dist` uniform random feasible plans.
#[allow(clippy::too_many_arguments)]
pub fn decmcts_round(
    own_id: RobotId,
    belief: &OccupancyBelief,
    tree: &mut DecMctsTree,
    received: &TeamPlanDistribution,
    world: &GridWorld,
    team: &TeamSpec,
    known: &KnownMap,
    channel: (f64, f64),
    cfg: &PlannerConfig,
    cache: &VisCache,
    rng: &mut ChaCha8Rng,
) -> RoundResult {
    let horizon = cfg.horizon;
    debug_assert_eq!(tree.horizon, horizon, "tree built for a different horizon");
    let root_cell = tree.root_cell;

    if tree.nodes.is_empty() {
        let untried = shuffled(feasible_moves(world, known, root_cell), rng);
        tree.nodes.push(TreeNode {
            cell: root_cell,
            depth: 0,
            parent: None,
            children: Vec::new(),
            untried,
            visits: 0,
            total_return: 0.0,
        });
    }

    let mut eval =
        UtilityEvaluator::new(world, team, belief, channel, cfg.delta, cache, horizon);
    let mut own_plan = TrajectoryPlan {
        robot_id: own_id,
        waypoints: Vec::new(),
        feasible: true,
    };

    // Returns are acquisition values in nats with an instance-dependent
    // scale; UCT means are normalised by the observed return spread so the
    // exploration constant keeps its usual magnitude.
    let mut r_min = f64::INFINITY;
    let mut r_max = f64::NEG_INFINITY;

    // Ledger of complete own plans evaluated by rollouts: the exchanged
    // distribution is built from these, keyed by waypoint sequence.
    let mut evaluated: BTreeMap<Vec<Cell>, (f64, u64)> = BTreeMap::new();

    let mut iterations_run = 0;
    for _ in 0..cfg.mcts_iterations {
        iterations_run += 1;

        // Selection: descend while fully expanded.
        let mut idx = 0;
        loop {
            let node = &tree.nodes[idx];
            if node.depth == horizon || !node.untried.is_empty() || node.children.is_empty() {
                break;
            }
            let ln_n = (node.visits.max(1) as f64).ln();
            let spread = if r_max > r_min { r_max - r_min } else { 1.0 };
            let mut best_child = node.children[0];
            let mut best_score = f64::NEG_INFINITY;
            for &c in &node.children {
                let child = &tree.nodes[c];
                let exploit = (child.mean() - r_min) / spread;
                let score =
                    exploit + cfg.c_ucb * (ln_n / child.visits.max(1) as f64).sqrt();
                if score > best_score {
                    best_score = score;
                    best_child = c;
                }
            }
            idx = best_child;
        }

        // Expansion.
        if tree.nodes[idx].depth < horizon {
            if let Some(cell) = tree.nodes[idx].untried.pop() {
                let depth = tree.nodes[idx].depth + 1;
                let untried = if depth < horizon {
                    shuffled(feasible_moves(world, known, cell), rng)
                } else {
                    Vec::new()
                };
                let child = TreeNode {
                    cell,
                    depth,
                    parent: Some(idx),
                    children: Vec::new(),
                    untried,
                    visits: 0,
                    total_return: 0.0,
                };
                tree.nodes.push(child);
                let new_idx = tree.nodes.len() - 1;
                tree.nodes[idx].children.push(new_idx);
                idx = new_idx;
            }
        }

        // Rollout: complete the own plan, sample teammates, evaluate the team.
        let prefix = tree.path_from_root(idx);
        let leaf_cell = tree.nodes[idx].cell;
        own_plan.waypoints =
            rollout_completion(world, known, &prefix, leaf_cell, horizon, rng);
        let teammates = sample_teammates(own_id, received, rng);
        let mut plans: Vec<&TrajectoryPlan> = Vec::with_capacity(teammates.len() + 1);
        plans.push(&own_plan);
        plans.extend(teammates);
        let value = eval.team_utility(&plans);
        r_min = r_min.min(value);
        r_max = r_max.max(value);
        let entry = evaluated.entry(own_plan.waypoints.clone()).or_insert((0.0, 0));
        entry.0 += value;
        entry.1 += 1;

        // Backpropagation.
        let mut back = Some(idx);
        while let Some(i) = back {
            tree.nodes[i].visits += 1;
            tree.nodes[i].total_return += value;
            back = tree.nodes[i].parent;
        }
    }

    if evaluated.is_empty() {
        // Documented fallback: uniform over k_dist random feasible plans.
        let mut plans = Vec::new();
        for _ in 0..cfg.k_dist {
            let waypoints = rollout_completion(world, known, &[], root_cell, horizon, rng);
            let plan = TrajectoryPlan {
                robot_id: own_id,
                waypoints,
                feasible: true,
            };
            if !plans.contains(&plan) {
                plans.push(plan);
            }
        }
        let p = 1.0 / plans.len() as f64;
        let best = plans[0].clone();
        return RoundResult {
            distribution: plans.into_iter().map(|pl| (pl, p)).collect(),
            best,
            best_return: 0.0,
            iterations_run,
        };
    }

    // Deterministic order: by mean descending, then by path lexicographically.
    let mut keyed: Vec<(f64, Vec<Cell>)> = evaluated
        .into_iter()
        .map(|(path, (sum, n))| (sum / n as f64, path))
        .collect();
    keyed.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("finite returns")
            .then_with(|| a.1.cmp(&b.1))
    });
    keyed.truncate(cfg.k_dist);

    let max_mean = keyed[0].0;
    let weights: Vec<f64> = keyed
        .iter()
        .map(|(mean, _)| ((mean - max_mean) / DISTRIBUTION_TAU).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    let distribution: Vec<(TrajectoryPlan, f64)> = keyed
        .iter()
        .zip(&weights)
        .map(|((_, path), w)| {
            (
                TrajectoryPlan {
                    robot_id: own_id,
                    waypoints: path.clone(),
                    feasible: true,
                },
                w / z,
            )
        })
        .collect();

    let best = distribution[0].0.clone();
    RoundResult {
        distribution,
        best,
        best_return: max_mean,
        iterations_run,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{mi_ucb, TeamRobot};
    use crate::rng::{derive, Stream};
    use crate::world::{RobotClass, SensorSpec};

    fn small_team(own: u16) -> TeamSpec {
        let mut team = TeamSpec::new();
        team.insert(
            RobotId(own),
            TeamRobot {
                class: RobotClass::ScoutAndTask,
                scout: Some(SensorSpec {
                    max_range: 1.6,
                    ..SensorSpec::default_scout()
                }),
                confirm: Some(SensorSpec {
                    max_range: 1.1,
                    ..SensorSpec::default_confirm()
                }),
            },
        );
        team
    }

    fn run_round(
        world: &GridWorld,
        belief: &OccupancyBelief,
        team: &TeamSpec,
        cfg: &PlannerConfig,
        root: Cell,
        seed: u64,
    ) -> RoundResult {
        let known = KnownMap::full(world);
        let cache = VisCache::new();
        let mut tree = DecMctsTree::new(root, cfg.horizon);
        let received = TeamPlanDistribution::empty(0);
        let mut rng = derive(seed, 0, Stream::Planner, 0);
        decmcts_round(
            RobotId(0),
            belief,
            &mut tree,
            &received,
            world,
            team,
            &known,
            (0.9, 0.05),
            cfg,
            &cache,
            &mut rng,
        )
    }

    /// All feasible own plans of the given horizon, by breadth-first
    /// enumeration. Exhaustive oracle for small instances.
    fn enumerate_plans(
        world: &GridWorld,
        known: &KnownMap,
        root: Cell,
        horizon: usize,
    ) -> Vec<Vec<Cell>> {
        let mut acc: Vec<Vec<Cell>> = vec![vec![]];
        for _ in 0..horizon {
            let mut next = Vec::new();
            for prefix in &acc {
                let from = *prefix.last().unwrap_or(&root);
                for mv in feasible_moves(world, known, from) {
                    let mut p = prefix.clone();
                    p.push(mv);
                    next.push(p);
                }
            }
            acc = next;
        }
        acc
    }

    #[test]
    fn single_robot_h1_matches_direct_argmax() {
        // H = 1 on a 1x3 strip: 3 feasible moves (clamped by bounds), an
        // exhaustive budget must find the direct argmax of the acquisition.
        let world = GridWorld::open(3, 1, 1.0);
        let mut belief = OccupancyBelief::new(3, 1, 0.2);
        // Pump one cell so moving toward it pays.
        for s in 0..4 {
            belief
                .update(&crate::belief::Detection {
                    origin_robot: RobotId(9),
                    seq: s,
                    cell: Cell::new(2, 0),
                    outcome: crate::belief::Outcome::Positive,
                    sensor_kind: crate::world::SensorKind::ScoutLongRange,
                    effective_p_detect: 0.9,
                    p_false: 0.1,
                    tick: 0,
                })
                .unwrap();
        }
        let team = small_team(0);
        let cfg = PlannerConfig {
            horizon: 1,
            mcts_iterations: 200,
            k_dist: 3,
            ..PlannerConfig::default()
        };
        let result = run_round(&world, &belief, &team, &cfg, Cell::new(0, 0), 3);

        let known = KnownMap::full(&world);
        let cache = VisCache::new();
        let mut best_direct = f64::NEG_INFINITY;
        let mut best_plan = None;
        for wps in enumerate_plans(&world, &known, Cell::new(0, 0), 1) {
            let plan = TrajectoryPlan {
                robot_id: RobotId(0),
                waypoints: wps,
                feasible: true,
            };
            let u = mi_ucb(&belief, &world, &team, &[plan.clone()], (0.9, 0.05), 0.1, &cache);
            if u > best_direct {
                best_direct = u;
                best_plan = Some(plan);
            }
        }
        assert_eq!(result.best.waypoints, best_plan.unwrap().waypoints);
        assert!((result.best_return - best_direct).abs() < 1e-9);
    }

    #[test]
    fn argmax_is_bit_stable_across_runs() {
        let world = GridWorld::open(4, 4, 1.0);
        let belief = OccupancyBelief::new(4, 4, 0.2);
        let team = small_team(0);
        let cfg = PlannerConfig {
            horizon: 2,
            mcts_iterations: 150,
            ..PlannerConfig::default()
        };
        let a = run_round(&world, &belief, &team, &cfg, Cell::new(1, 1), 42);
        let b = run_round(&world, &belief, &team, &cfg, Cell::new(1, 1), 42);
        assert_eq!(a.best, b.best);
        assert_eq!(a.distribution, b.distribution);
        assert_eq!(a.best_return.to_bits(), b.best_return.to_bits());
    }

    #[test]
    fn zero_iterations_falls_back_to_uniform_random_plans() {
        let world = GridWorld::open(4, 4, 1.0);
        let belief = OccupancyBelief::new(4, 4, 0.2);
        let team = small_team(0);
        let cfg = PlannerConfig {
            horizon: 3,
            mcts_iterations: 0,
            k_dist: 3,
            ..PlannerConfig::default()
        };
        let result = run_round(&world, &belief, &team, &cfg, Cell::new(1, 1), 9);
        assert!(!result.distribution.is_empty());
        assert!(result.distribution.len() <= 3);
        let total: f64 = result.distribution.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let p0 = result.distribution[0].1;
        for (plan, p) in &result.distribution {
            assert_eq!(*p, p0, "uniform fallback");
            assert_eq!(plan.waypoints.len(), 3);
        }
    }

    #[test]
    fn boxed_in_robot_stays_in_place() {
        // Fully enclosed: staying put is the only feasible move.
        let mut obstacles = vec![true; 9];
        obstacles[4] = false;
        let world = GridWorld::new(3, 3, 1.0, obstacles, vec![], 0).unwrap();
        let belief = OccupancyBelief::new(3, 3, 0.2);
        let team = small_team(0);
        let cfg = PlannerConfig {
            horizon: 2,
            mcts_iterations: 20,
            ..PlannerConfig::default()
        };
        let result = run_round(&world, &belief, &team, &cfg, Cell::new(1, 1), 5);
        assert_eq!(result.best.waypoints, vec![Cell::new(1, 1), Cell::new(1, 1)]);
    }

    #[test]
    fn distribution_probabilities_softmax_over_means() {
        let world = GridWorld::open(3, 3, 1.0);
        let belief = OccupancyBelief::new(3, 3, 0.3);
        let team = small_team(0);
        let cfg = PlannerConfig {
            horizon: 1,
            mcts_iterations: 500,
            k_dist: 4,
            ..PlannerConfig::default()
        };
        let result = run_round(&world, &belief, &team, &cfg, Cell::new(0, 0), 17);
        assert!(result.distribution.len() <= 4);
        let total: f64 = result.distribution.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-9);
        // Probabilities are non-increasing in rank (softmax of sorted means).
        for pair in result.distribution.windows(2) {
            assert!(pair[0].1 >= pair[1].1 - 1e-12);
        }
    }

    #[test]
    fn teammate_sampling_respects_point_mass() {
        // A teammate broadcasting a point-mass distribution is always sampled
        // as that plan; a plan that parks the teammate on the interesting
        // region makes the own robot look elsewhere.
        let world = GridWorld::open(5, 1, 1.0);
        let mut belief = OccupancyBelief::new(5, 1, 0.2);
        for s in 0..3 {
            belief
                .update(&crate::belief::Detection {
                    origin_robot: RobotId(9),
                    seq: s,
                    cell: Cell::new(4, 0),
                    outcome: crate::belief::Outcome::Positive,
                    sensor_kind: crate::world::SensorKind::ScoutLongRange,
                    effective_p_detect: 0.9,
                    p_false: 0.1,
                    tick: 0,
                })
                .unwrap();
        }
        let mut team = small_team(0);
        team.insert(
            RobotId(1),
            TeamRobot {
                class: RobotClass::ScoutAndTask,
                scout: Some(SensorSpec {
                    max_range: 1.6,
                    ..SensorSpec::default_scout()
                }),
                confirm: Some(SensorSpec {
                    max_range: 1.1,
                    ..SensorSpec::default_confirm()
                }),
            },
        );
        let known = KnownMap::full(&world);
        let cache = VisCache::new();
        let cfg = PlannerConfig {
            horizon: 2,
            mcts_iterations: 400,
            ..PlannerConfig::default()
        };

        // Teammate camped on the hot cell.
        let mut received = TeamPlanDistribution::empty(0);
        received.per_robot.insert(
            RobotId(1),
            vec![(TrajectoryPlan::stay_in_place(RobotId(1), Cell::new(4, 0), 2), 1.0)],
        );
        let mut tree = DecMctsTree::new(Cell::new(2, 0), 2);
        let mut rng = derive(3, 0, Stream::Planner, 0);
        let with_teammate = decmcts_round(
            RobotId(0),
            &belief,
            &mut tree,
            &received,
            &world,
            &team,
            &known,
            (0.9, 0.05),
            &cfg,
            &cache,
            &mut rng,
        );
        // The hot cell's confirmation is already covered by the teammate, so
        // the own best plan heads away (toward unscanned cells).
        assert!(
            with_teammate.best.waypoints[1].x <= 2,
            "own plan duplicates teammate coverage: {:?}",
            with_teammate.best.waypoints
        );
    }
}
