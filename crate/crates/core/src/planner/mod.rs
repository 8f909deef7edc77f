//! The acquisition function over team trajectory sets and the decentralised
//! Monte Carlo tree search that maximises it.
//!
//! The acquisition value of a candidate team plan A is
//! `(1/delta) * I(E; Y | A) + log E exp R(E, A)`: the Shannon information the
//! scouts' long-range observations Y would carry about the target field E,
//! plus the cumulant generating function of the confirmation reward. With
//! probability at least `1 - delta` this value upper-bounds the expected
//! reward after the observations arrive, so maximising it chases the
//! post-measurement mission payoff without knowing the measurements. Both
//! terms are summed in nats (mutual information computed in bits is scaled by
//! ln 2 first).

mod mcts;

pub use mcts::{decmcts_round, DecMctsTree, RoundResult};

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::OccupancyBelief;
use crate::geom::Cell;
use crate::world::{visible_cells, Fov, GridWorld, RobotClass, SensorKind, SensorSpec};
use crate::RobotId;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("planner config invalid: {0}")]
    BadConfig(String),
}

/// Planner tunables; `delta` is the confidence parameter of the acquisition
/// bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub delta: f64,
    pub horizon: usize,
    pub mcts_iterations: usize,
    pub c_ucb: f64,
    /// Candidate plans kept per robot in the exchanged distribution.
    pub k_dist: usize,
    /// Ticks between plan-distribution broadcasts.
    pub exchange_period: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            horizon: 8,
            mcts_iterations: 128,
            c_ucb: 1.0,
            k_dist: 3,
            exchange_period: 4,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(PlannerError::BadConfig(format!(
                "delta must be in (0,1), got {}",
                self.delta
            )));
        }
        if self.horizon == 0 {
            return Err(PlannerError::BadConfig("horizon must be >= 1".into()));
        }
        if self.k_dist == 0 {
            return Err(PlannerError::BadConfig("k_dist must be >= 1".into()));
        }
        Ok(())
    }
}

/// One robot's candidate waypoint sequence over the planning horizon.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub robot_id: RobotId,
    pub waypoints: Vec<Cell>,
    pub feasible: bool,
}

impl TrajectoryPlan {
    pub fn stay_in_place(robot_id: RobotId, cell: Cell, horizon: usize) -> Self {
        Self {
            robot_id,
            waypoints: vec![cell; horizon],
            feasible: true,
        }
    }

    /// Invariants: consecutive waypoints 8-connected or equal, nothing on a
    /// known obstacle.
    pub fn validate(&self, known: &KnownMap) -> bool {
        if self.waypoints.is_empty() {
            return false;
        }
        for w in self.waypoints.windows(2) {
            if !w[0].adjacent8_or_equal(&w[1]) {
                return false;
            }
        }
        self.waypoints.iter().all(|c| !known.is_blocked(*c))
    }
}

/// Per-robot probability distribution over candidate plans, as exchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamPlanDistribution {
    pub per_robot: BTreeMap<RobotId, Vec<(TrajectoryPlan, f64)>>,
    pub stamp: u64,
}

impl TeamPlanDistribution {
    pub fn empty(stamp: u64) -> Self {
        Self {
            per_robot: BTreeMap::new(),
            stamp,
        }
    }

    pub fn validate(&self, k_dist: usize) -> bool {
        self.per_robot.values().all(|plans| {
            !plans.is_empty()
                && plans.len() <= k_dist
                && (plans.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() <= 1e-9
        })
    }
}

/// What the planner needs to know about a teammate: class and sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamRobot {
    pub class: RobotClass,
    pub scout: Option<SensorSpec>,
    pub confirm: Option<SensorSpec>,
}

pub type TeamSpec = BTreeMap<RobotId, TeamRobot>;

/// What the planning robot believes about traversability. Cells start
/// unknown (assumed free); sensing marks obstacle cells as they are seen.
#[derive(Debug, Clone)]
pub struct KnownMap {
    width: u16,
    height: u16,
    blocked: Vec<bool>,
}

impl KnownMap {
    pub fn unknown(width: u16, height: u16) -> Self {
        Self {
            width,
            height,
            blocked: vec![false; width as usize * height as usize],
        }
    }

    /// A map that already knows the full ground truth.
    pub fn full(world: &GridWorld) -> Self {
        Self {
            width: world.width(),
            height: world.height(),
            blocked: world.obstacles().to_vec(),
        }
    }

    pub fn mark_obstacle(&mut self, cell: Cell) {
        if cell.x < self.width && cell.y < self.height {
            let idx = cell.y as usize * self.width as usize + cell.x as usize;
            self.blocked[idx] = true;
        }
    }

    /// Out-of-bounds counts as blocked.
    pub fn is_blocked(&self, cell: Cell) -> bool {
        if cell.x >= self.width || cell.y >= self.height {
            return true;
        }
        self.blocked[cell.y as usize * self.width as usize + cell.x as usize]
    }
}

/// Lazily filled per-(cell, sensor footprint) visibility lists. Cone sensors
/// are widened to omnidirectional here: plans carry no headings, so planning
/// coverage assumes the robot may face any direction during a dwell; the
/// engine's actual confirmation stays heading-exact.
#[derive(Debug, Default)]
pub struct VisCache {
    map: RefCell<HashMap<(u32, SensorKind, u64), Rc<Vec<u32>>>>,
}

impl VisCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn visible_idx(&self, world: &GridWorld, cell: Cell, sensor: &SensorSpec) -> Rc<Vec<u32>> {
        let key = (
            world.idx(cell) as u32,
            sensor.kind,
            sensor.max_range.to_bits(),
        );
        if let Some(hit) = self.map.borrow().get(&key) {
            return Rc::clone(hit);
        }
        let omni = SensorSpec {
            fov: Fov::Omnidirectional,
            ..*sensor
        };
        let pose = world.pose_at_cell(cell, 0.0);
        let cells = visible_cells(world, &pose, &omni).expect("cell pose is in bounds");
        let idx: Rc<Vec<u32>> = Rc::new(cells.into_iter().map(|c| world.idx(c) as u32).collect());
        self.map.borrow_mut().insert(key, Rc::clone(&idx));
        idx
    }
}

/// Scout observation counts and confirm coverage of a candidate team plan.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Coverage {
    pub scout_obs: BTreeMap<Cell, u32>,
    pub confirm_cells: BTreeSet<Cell>,
}

/// Reusable flat-array coverage accumulator for the rollout hot path.
#[derive(Debug)]
struct CoverageBuf {
    counts: Vec<u16>,
    touched: Vec<u32>,
    confirm: Vec<bool>,
    confirm_touched: Vec<u32>,
}

impl CoverageBuf {
    fn new(n_cells: usize) -> Self {
        Self {
            counts: vec![0; n_cells],
            touched: Vec::new(),
            confirm: vec![false; n_cells],
            confirm_touched: Vec::new(),
        }
    }

    fn reset(&mut self) {
        for &i in &self.touched {
            self.counts[i as usize] = 0;
        }
        self.touched.clear();
        for &i in &self.confirm_touched {
            self.confirm[i as usize] = false;
        }
        self.confirm_touched.clear();
    }

    fn accumulate(
        &mut self,
        world: &GridWorld,
        team: &TeamSpec,
        cache: &VisCache,
        plans: &[&TrajectoryPlan],
    ) {
        for plan in plans {
            let Some(robot) = team.get(&plan.robot_id) else {
                continue;
            };
            if let Some(scout) = &robot.scout {
                for &wp in &plan.waypoints {
                    for &i in cache.visible_idx(world, wp, scout).iter() {
                        if self.counts[i as usize] == 0 {
                            self.touched.push(i);
                        }
                        self.counts[i as usize] += 1;
                    }
                }
            }
            if let Some(confirm) = &robot.confirm {
                for &wp in &plan.waypoints {
                    for &i in cache.visible_idx(world, wp, confirm).iter() {
                        if !self.confirm[i as usize] {
                            self.confirm[i as usize] = true;
                            self.confirm_touched.push(i);
                        }
                    }
                }
            }
        }
    }
}

/// Which cells contribute to Y (scout observation counts) and to R (confirm
/// coverage) for a candidate set of team trajectories.
pub fn coverage(
    world: &GridWorld,
    team: &TeamSpec,
    plans: &[TrajectoryPlan],
    cache: &VisCache,
) -> Coverage {
    let mut buf = CoverageBuf::new(world.n_cells());
    let refs: Vec<&TrajectoryPlan> = plans.iter().collect();
    buf.accumulate(world, team, cache, &refs);
    let w = world.width() as usize;
    let cell_of = |i: u32| Cell::new((i as usize % w) as u16, (i as usize / w) as u16);
    let mut out = Coverage::default();
    for &i in &buf.touched {
        out.scout_obs.insert(cell_of(i), buf.counts[i as usize] as u32);
    }
    for &i in &buf.confirm_touched {
        out.confirm_cells.insert(cell_of(i));
    }
    out
}

/// Binomial channel tables for k iid observations: pmf under X=1 and X=0 and
/// their entropies. Only the mixture depends on the cell prior, so these are
/// cached per count.
#[derive(Debug, Clone)]
struct ChannelTable {
    pmf1: Vec<f64>,
    pmf0: Vec<f64>,
    h1_bits: f64,
    h0_bits: f64,
}

fn binomial_pmf(k: u32, p: f64) -> Vec<f64> {
    let k = k as usize;
    let mut pmf = vec![0.0; k + 1];
    let q = 1.0 - p;
    if q <= 0.0 {
        pmf[k] = 1.0;
        return pmf;
    }
    pmf[0] = q.powi(k as i32);
    for s in 1..=k {
        pmf[s] = pmf[s - 1] * ((k - s + 1) as f64 / s as f64) * (p / q);
    }
    pmf
}

fn entropy_bits(pmf: &[f64]) -> f64 {
    -pmf.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

fn channel_table(k: u32, channel: (f64, f64)) -> ChannelTable {
    let pmf1 = binomial_pmf(k, channel.0);
    let pmf0 = binomial_pmf(k, channel.1);
    let h1_bits = entropy_bits(&pmf1);
    let h0_bits = entropy_bits(&pmf0);
    ChannelTable {
        pmf1,
        pmf0,
        h1_bits,
        h0_bits,
    }
}

fn mi_from_table(p: f64, table: &ChannelTable) -> f64 {
    let mut h_mix = 0.0;
    for (p1, p0) in table.pmf1.iter().zip(&table.pmf0) {
        let m = p * p1 + (1.0 - p) * p0;
        if m > 0.0 {
            h_mix -= m * m.log2();
        }
    }
    (h_mix - p * table.h1_bits - (1.0 - p) * table.h0_bits).max(0.0)
}

/// Exact mutual information in bits between a Bernoulli(p) cell and k iid
/// binary-channel observations of it, via the positives-count sufficient
/// statistic: I = H(S) - p H(S|X=1) - (1-p) H(S|X=0), S binomial.
pub fn cell_mutual_information_bits(p: f64, k: u32, channel: (f64, f64)) -> f64 {
    if k == 0 {
        return 0.0;
    }
    mi_from_table(p, &channel_table(k, channel))
}

/// I(E; Y | A) in bits summed over all covered cells.
pub fn mutual_information(
    belief: &OccupancyBelief,
    scout_obs: &BTreeMap<Cell, u32>,
    channel: (f64, f64),
) -> f64 {
    let mut tables: Vec<Option<ChannelTable>> = Vec::new();
    let mut sum = 0.0;
    for (&cell, &k) in scout_obs {
        if k == 0 {
            continue;
        }
        let p = belief.posterior_prob(cell).expect("covered cell in bounds");
        let ki = k as usize;
        if tables.len() <= ki {
            tables.resize(ki + 1, None);
        }
        let table = tables[ki].get_or_insert_with(|| channel_table(k, channel));
        sum += mi_from_table(p, table);
    }
    sum
}

/// log E exp R in nats, with R the count of newly confirmed targets over the
/// covered cells: closed form sum of log(1 - p + p e) per unconfirmed cell.
pub fn reward_cgf<I>(belief: &OccupancyBelief, confirm_cells: I) -> f64
where
    I: IntoIterator<Item = Cell>,
{
    let e = std::f64::consts::E;
    let mut sum = 0.0;
    for cell in confirm_cells {
        if belief.is_confirmed(cell) {
            continue;
        }
        let p = belief.posterior_prob(cell).expect("covered cell in bounds");
        sum += (1.0 - p + p * e).ln();
    }
    sum
}

/// Full acquisition value of a team plan set, in nats.
pub fn mi_ucb(
    belief: &OccupancyBelief,
    world: &GridWorld,
    team: &TeamSpec,
    plans: &[TrajectoryPlan],
    channel: (f64, f64),
    delta: f64,
    cache: &VisCache,
) -> f64 {
    let cov = coverage(world, team, plans, cache);
    let mi_bits = mutual_information(belief, &cov.scout_obs, channel);
    let cgf = reward_cgf(belief, cov.confirm_cells.iter().copied());
    mi_bits * std::f64::consts::LN_2 / delta + cgf
}

/// Hot-path acquisition evaluator used by the tree search. The belief is a
/// constant snapshot for the whole round, so per-cell posteriors, per-cell
/// CGF contributions and the MI value for every (cell, count) pair are
/// precomputed once; each rollout then reduces to coverage accumulation and
/// table lookups.
pub struct UtilityEvaluator<'a> {
    world: &'a GridWorld,
    team: &'a TeamSpec,
    cache: &'a VisCache,
    delta: f64,
    buf: CoverageBuf,
    /// mi_rows[cell][k] = MI in bits of k observations of that cell.
    mi_rows: Vec<Vec<f64>>,
    /// cgf_cell[cell] = log(1 - p + p e), zero for confirmed cells.
    cgf_cell: Vec<f64>,
    max_count: usize,
}

impl<'a> UtilityEvaluator<'a> {
    pub fn new(
        world: &'a GridWorld,
        team: &'a TeamSpec,
        belief: &'a OccupancyBelief,
        channel: (f64, f64),
        delta: f64,
        cache: &'a VisCache,
        horizon: usize,
    ) -> Self {
        // The largest possible per-cell observation count: every scout
        // covering the cell from every waypoint of its plan. Longer foreign
        // plans clamp to the table edge.
        let n_scouts = team.values().filter(|r| r.scout.is_some()).count().max(1);
        let max_count = n_scouts * horizon.max(1);

        let tables: Vec<ChannelTable> = (0..=max_count)
            .map(|k| channel_table(k as u32, channel))
            .collect();
        let w = world.width() as usize;
        let n_cells = world.n_cells();
        let e = std::f64::consts::E;
        let mut mi_rows = Vec::with_capacity(n_cells);
        let mut cgf_cell = Vec::with_capacity(n_cells);
        for i in 0..n_cells {
            let cell = Cell::new((i % w) as u16, (i / w) as u16);
            let p = belief.posterior_prob(cell).expect("in bounds");
            let mut row = Vec::with_capacity(max_count + 1);
            row.push(0.0);
            for table in &tables[1..] {
                row.push(mi_from_table(p, table));
            }
            mi_rows.push(row);
            cgf_cell.push(if belief.is_confirmed(cell) {
                0.0
            } else {
                (1.0 - p + p * e).ln()
            });
        }
        Self {
            world,
            team,
            cache,
            delta,
            buf: CoverageBuf::new(n_cells),
            mi_rows,
            cgf_cell,
            max_count,
        }
    }

    pub fn team_utility(&mut self, plans: &[&TrajectoryPlan]) -> f64 {
        self.buf.reset();
        self.buf.accumulate(self.world, self.team, self.cache, plans);
        let mut mi_bits = 0.0;
        for &i in &self.buf.touched {
            let k = (self.buf.counts[i as usize] as usize).min(self.max_count);
            mi_bits += self.mi_rows[i as usize][k];
        }
        let mut cgf = 0.0;
        for &i in &self.buf.confirm_touched {
            cgf += self.cgf_cell[i as usize];
        }
        mi_bits * std::f64::consts::LN_2 / self.delta + cgf
    }
}

/// Realised scout outcomes on covered cells: (positives, total) per cell.
#[derive(Debug, Clone, Default)]
pub struct OutcomeSet {
    pub counts: BTreeMap<Cell, (u32, u32)>,
}

/// Expected confirmation reward after Bayes-updating the belief with realised
/// scout outcomes: the quantity the acquisition value upper-bounds.
pub fn posterior_expected_reward(
    belief: &OccupancyBelief,
    world: &GridWorld,
    team: &TeamSpec,
    plans: &[TrajectoryPlan],
    outcomes: &OutcomeSet,
    channel: (f64, f64),
    cache: &VisCache,
) -> f64 {
    let cov = coverage(world, team, plans, cache);
    let (p_d, p_f) = channel;
    let mut sum = 0.0;
    for &cell in &cov.confirm_cells {
        if belief.is_confirmed(cell) {
            continue;
        }
        let p = belief.posterior_prob(cell).expect("in bounds");
        let posterior = match outcomes.counts.get(&cell) {
            None => p,
            Some(&(s, k)) => {
                let mut log_odds = (p / (1.0 - p)).ln();
                log_odds += s as f64 * (p_d / p_f).ln();
                log_odds += (k - s) as f64 * ((1.0 - p_d) / (1.0 - p_f)).ln();
                crate::belief::logistic(log_odds)
            }
        };
        sum += posterior;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn team_one_scout() -> TeamSpec {
        let mut team = TeamSpec::new();
        team.insert(
            RobotId(0),
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

    /// Brute-force MI oracle for one cell: joint enumeration over x and the
    /// full observation vector, I = sum p(x,y) log2(p(x,y) / (p(x) p(y))).
    fn mi_oracle_single_cell_bits(p: f64, k: u32, (p_d, p_f): (f64, f64)) -> f64 {
        let n_y = 1usize << k;
        let mut total = 0.0;
        for y in 0..n_y {
            let positives = (y as u32).count_ones();
            let negatives = k - positives;
            let py_given_1 = p_d.powi(positives as i32) * (1.0 - p_d).powi(negatives as i32);
            let py_given_0 = p_f.powi(positives as i32) * (1.0 - p_f).powi(negatives as i32);
            let joint1 = p * py_given_1;
            let joint0 = (1.0 - p) * py_given_0;
            let py = joint1 + joint0;
            if joint1 > 0.0 {
                total += joint1 * (joint1 / (p * py)).log2();
            }
            if joint0 > 0.0 {
                total += joint0 * (joint0 / ((1.0 - p) * py)).log2();
            }
        }
        total
    }

    #[test]
    fn mi_zero_without_observations() {
        let belief = OccupancyBelief::new(3, 3, 0.5);
        let obs = BTreeMap::new();
        assert_eq!(mutual_information(&belief, &obs, (0.9, 0.1)), 0.0);
        assert_eq!(cell_mutual_information_bits(0.5, 0, (0.9, 0.1)), 0.0);
    }

    #[test]
    fn mi_perfect_channel_one_bit() {
        let v = cell_mutual_information_bits(0.5, 1, (1.0, 0.0));
        assert!((v - 1.0).abs() < 1e-12, "v = {v}");
    }

    #[test]
    fn mi_matches_enumeration_oracle() {
        for &(p, k, pd, pf) in &[
            (0.5, 1u32, 0.9, 0.1),
            (0.3, 2, 0.8, 0.2),
            (0.01, 3, 0.9, 0.05),
            (0.7, 4, 0.6, 0.3),
            (0.999, 6, 0.95, 0.02),
        ] {
            let fast = cell_mutual_information_bits(p, k, (pd, pf));
            let oracle = mi_oracle_single_cell_bits(p, k, (pd, pf));
            assert!(
                (fast - oracle).abs() < 1e-12,
                "p={p} k={k}: {fast} vs {oracle}"
            );
        }
    }

    #[test]
    fn mi_monotone_in_observation_count() {
        for k in 1..12u32 {
            let lo = cell_mutual_information_bits(0.3, k, (0.9, 0.1));
            let hi = cell_mutual_information_bits(0.3, k + 1, (0.9, 0.1));
            assert!(hi >= lo - 1e-12, "k={k}: {hi} < {lo}");
        }
    }

    #[test]
    fn mi_vanishes_at_certain_cells() {
        // Clamped-certain cells carry (almost) no information.
        assert!(cell_mutual_information_bits(1e-6, 2, (0.9, 0.1)) < 1e-4);
        assert!(cell_mutual_information_bits(1.0 - 1e-6, 2, (0.9, 0.1)) < 1e-4);
        assert!(cell_mutual_information_bits(0.5, 2, (0.9, 0.1)) > 0.1);
    }

    #[test]
    fn cgf_examples() {
        let belief = OccupancyBelief::new(2, 2, 0.5);
        assert_eq!(reward_cgf(&belief, std::iter::empty()), 0.0);
        // One cell at p = 0.5: log(0.5 + 0.5 e) = 0.620115...
        let v = reward_cgf(&belief, [Cell::new(0, 0)]);
        assert!((v - 0.6201145069582667).abs() < 1e-12, "v = {v}");
        // p -> 1 limit contributes exactly 1 (log e).
        let one = (1.0f64 - 1.0 + std::f64::consts::E).ln();
        assert!((one - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cgf_within_jensen_and_max_bounds() {
        let mut belief = OccupancyBelief::new(4, 1, 0.3);
        belief.confirm_cell(Cell::new(3, 0)).unwrap();
        let cells: Vec<Cell> = (0..4).map(|x| Cell::new(x, 0)).collect();
        let cgf = reward_cgf(&belief, cells.iter().copied());
        let sum_p: f64 = cells
            .iter()
            .filter(|c| !belief.is_confirmed(**c))
            .map(|c| belief.posterior_prob(*c).unwrap())
            .sum();
        assert!(cgf >= sum_p, "Jensen lower bound: {cgf} < {sum_p}");
        assert!(cgf <= 3.0, "max-reward upper bound over 3 unconfirmed cells");
    }

    #[test]
    fn coverage_empty_plan_set() {
        let world = GridWorld::open(3, 3, 1.0);
        let cache = VisCache::new();
        let cov = coverage(&world, &team_one_scout(), &[], &cache);
        assert!(cov.scout_obs.is_empty());
        assert!(cov.confirm_cells.is_empty());
    }

    #[test]
    fn coverage_standing_scout_counts_horizon() {
        let world = GridWorld::open(3, 3, 1.0);
        let cache = VisCache::new();
        let team = team_one_scout();
        let h = 5;
        let plan = TrajectoryPlan::stay_in_place(RobotId(0), Cell::new(1, 1), h);
        let cov = coverage(&world, &team, &[plan], &cache);
        // Scout range 1.6 covers the full 3x3 neighbourhood from the centre.
        assert_eq!(cov.scout_obs.len(), 9);
        for count in cov.scout_obs.values() {
            assert_eq!(*count, h as u32);
        }
        // Confirm range 1.1: the 4-neighbourhood plus the centre.
        assert_eq!(cov.confirm_cells.len(), 5);
        assert!(cov.confirm_cells.contains(&Cell::new(1, 1)));
        assert!(cov.confirm_cells.contains(&Cell::new(0, 1)));
        assert!(!cov.confirm_cells.contains(&Cell::new(0, 0)));
    }

    #[test]
    fn coverage_hand_enumerated_two_robots() {
        let world = GridWorld::open(3, 3, 1.0);
        let cache = VisCache::new();
        let mut team = team_one_scout();
        team.insert(
            RobotId(1),
            TeamRobot {
                class: RobotClass::TaskOnly,
                scout: None,
                confirm: Some(SensorSpec {
                    max_range: 1.1,
                    ..SensorSpec::default_confirm()
                }),
            },
        );
        let plans = vec![
            TrajectoryPlan::stay_in_place(RobotId(0), Cell::new(0, 0), 1),
            TrajectoryPlan::stay_in_place(RobotId(1), Cell::new(1, 0), 1),
        ];
        let cov = coverage(&world, &team, &plans, &cache);
        // Scout at (0,0) with range 1.6: cells within sqrt(2).
        let expect_scout = vec![
            Cell::new(0, 0),
            Cell::new(0, 1),
            Cell::new(1, 0),
            Cell::new(1, 1),
        ];
        assert_eq!(cov.scout_obs.keys().copied().collect::<Vec<_>>(), expect_scout);
        // The task robot's confirm footprint and the scout's overlap at (1,0):
        // present in both outputs.
        assert!(cov.confirm_cells.contains(&Cell::new(1, 0)));
        assert!(cov.scout_obs.contains_key(&Cell::new(1, 0)));
    }

    #[test]
    fn mi_ucb_term_structure() {
        let world = GridWorld::open(3, 3, 1.0);
        let cache = VisCache::new();
        let belief = OccupancyBelief::new(3, 3, 0.2);
        let team = team_one_scout();
        let plan = vec![TrajectoryPlan::stay_in_place(RobotId(0), Cell::new(1, 1), 2)];

        // No confirm coverage: equals (1/delta) * MI alone.
        let mut team_no_confirm = team.clone();
        team_no_confirm.get_mut(&RobotId(0)).unwrap().confirm = None;
        let u = mi_ucb(&belief, &world, &team_no_confirm, &plan, (0.9, 0.05), 0.1, &cache);
        let cov = coverage(&world, &team_no_confirm, &plan, &cache);
        let mi = mutual_information(&belief, &cov.scout_obs, (0.9, 0.05));
        assert!((u - mi * std::f64::consts::LN_2 / 0.1).abs() < 1e-12);

        // No scouts: equals the CGF alone, independent of delta.
        let mut team_no_scout = team.clone();
        team_no_scout.get_mut(&RobotId(0)).unwrap().scout = None;
        let u1 = mi_ucb(&belief, &world, &team_no_scout, &plan, (0.9, 0.05), 0.1, &cache);
        let u2 = mi_ucb(&belief, &world, &team_no_scout, &plan, (0.9, 0.05), 0.05, &cache);
        assert!((u1 - u2).abs() < 1e-12);
        let cov = coverage(&world, &team_no_scout, &plan, &cache);
        let cgf = reward_cgf(&belief, cov.confirm_cells.iter().copied());
        assert!((u1 - cgf).abs() < 1e-12);

        // Halving delta exactly doubles the MI term, CGF unchanged.
        let u_d1 = mi_ucb(&belief, &world, &team, &plan, (0.9, 0.05), 0.1, &cache);
        let u_d2 = mi_ucb(&belief, &world, &team, &plan, (0.9, 0.05), 0.05, &cache);
        let cov = coverage(&world, &team, &plan, &cache);
        let mi = mutual_information(&belief, &cov.scout_obs, (0.9, 0.05)) * std::f64::consts::LN_2;
        let cgf = reward_cgf(&belief, cov.confirm_cells.iter().copied());
        assert!((u_d1 - (mi / 0.1 + cgf)).abs() < 1e-12);
        assert!((u_d2 - (mi / 0.05 + cgf)).abs() < 1e-12);
    }

    #[test]
    fn utility_evaluator_matches_public_path() {
        let world = GridWorld::open(4, 4, 1.0);
        let cache = VisCache::new();
        let mut belief = OccupancyBelief::new(4, 4, 0.15);
        belief.confirm_cell(Cell::new(2, 2)).unwrap();
        let mut team = team_one_scout();
        team.insert(
            RobotId(1),
            TeamRobot {
                class: RobotClass::TaskOnly,
                scout: None,
                confirm: Some(SensorSpec {
                    max_range: 1.1,
                    ..SensorSpec::default_confirm()
                }),
            },
        );
        let plans = vec![
            TrajectoryPlan {
                robot_id: RobotId(0),
                waypoints: vec![Cell::new(0, 0), Cell::new(1, 1), Cell::new(2, 2)],
                feasible: true,
            },
            TrajectoryPlan::stay_in_place(RobotId(1), Cell::new(3, 3), 3),
        ];
        let slow = mi_ucb(&belief, &world, &team, &plans, (0.9, 0.05), 0.1, &cache);
        let mut eval = UtilityEvaluator::new(&world, &team, &belief, (0.9, 0.05), 0.1, &cache, 3);
        let refs: Vec<&TrajectoryPlan> = plans.iter().collect();
        let fast = eval.team_utility(&refs);
        assert!((slow - fast).abs() < 1e-12, "{slow} vs {fast}");
        // Buffer reuse leaves the result unchanged.
        let fast2 = eval.team_utility(&refs);
        assert!((fast - fast2).abs() < 1e-15);
    }

    #[test]
    fn posterior_reward_hand_bayes() {
        let world = GridWorld::open(3, 3, 1.0);
        let cache = VisCache::new();
        let team = team_one_scout();
        let belief = OccupancyBelief::new(3, 3, 0.5);
        let plan = vec![TrajectoryPlan::stay_in_place(RobotId(0), Cell::new(1, 1), 1)];

        // No outcomes: prior expected reward, below the CGF (Jensen).
        let empty = OutcomeSet::default();
        let prior_sum =
            posterior_expected_reward(&belief, &world, &team, &plan, &empty, (0.9, 0.1), &cache);
        let cov = coverage(&world, &team, &plan, &cache);
        let direct: f64 = cov
            .confirm_cells
            .iter()
            .map(|c| belief.posterior_prob(*c).unwrap())
            .sum();
        assert!((prior_sum - direct).abs() < 1e-12);
        let cgf = reward_cgf(&belief, cov.confirm_cells.iter().copied());
        assert!(prior_sum <= cgf + 1e-12);

        // A positive outcome on a confirm cell with (0.9, 0.1) from prior 0.5
        // moves that cell's contribution to 0.9.
        let mut outcomes = OutcomeSet::default();
        outcomes.counts.insert(Cell::new(1, 1), (1, 1));
        let with_pos =
            posterior_expected_reward(&belief, &world, &team, &plan, &outcomes, (0.9, 0.1), &cache);
        assert!((with_pos - (direct - 0.5 + 0.9)).abs() < 1e-9);

        // All-negative outcomes never exceed the prior expected reward.
        let mut all_neg = OutcomeSet::default();
        for &c in &cov.confirm_cells {
            all_neg.counts.insert(c, (0, 2));
        }
        let v =
            posterior_expected_reward(&belief, &world, &team, &plan, &all_neg, (0.9, 0.1), &cache);
        assert!(v <= prior_sum);
    }

    #[test]
    fn plan_validation() {
        let known = KnownMap::unknown(4, 4);
        let good = TrajectoryPlan {
            robot_id: RobotId(0),
            waypoints: vec![Cell::new(0, 0), Cell::new(1, 1), Cell::new(1, 2)],
            feasible: true,
        };
        assert!(good.validate(&known));
        let teleport = TrajectoryPlan {
            robot_id: RobotId(0),
            waypoints: vec![Cell::new(0, 0), Cell::new(2, 2)],
            feasible: true,
        };
        assert!(!teleport.validate(&known));
        let mut blocked = KnownMap::unknown(4, 4);
        blocked.mark_obstacle(Cell::new(1, 1));
        assert!(!good.validate(&blocked));
    }

    mod mi_properties {
        use super::super::cell_mutual_information_bits;
        use proptest::prelude::*;

        proptest! {
            /// Nonnegative for any prior, count and informative channel.
            #[test]
            fn mi_nonnegative(
                p in 0.0001f64..0.9999,
                k in 0u32..12,
                p_d in 0.5f64..0.999,
                gap in 0.05f64..0.45,
            ) {
                let p_f = p_d - gap;
                prop_assert!(cell_mutual_information_bits(p, k, (p_d, p_f)) >= 0.0);
            }

            /// More observations never lose information, for any channel.
            #[test]
            fn mi_monotone_any_channel(
                p in 0.001f64..0.999,
                k in 0u32..10,
                p_d in 0.5f64..0.999,
                gap in 0.05f64..0.45,
            ) {
                let channel = (p_d, p_d - gap);
                let lo = cell_mutual_information_bits(p, k, channel);
                let hi = cell_mutual_information_bits(p, k + 1, channel);
                prop_assert!(hi >= lo - 1e-12, "k={k}: {hi} < {lo}");
            }

            /// Strictly positive away from certainty with an informative
            /// channel and at least one observation.
            #[test]
            fn mi_positive_in_the_interior(
                p in 0.05f64..0.95,
                k in 1u32..8,
                p_d in 0.6f64..0.95,
                gap in 0.2f64..0.5,
            ) {
                let v = cell_mutual_information_bits(p, k, (p_d, p_d - gap));
                prop_assert!(v > 1e-6, "p={p} k={k}: {v}");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(PlannerConfig::default().validate().is_ok());
        assert!(PlannerConfig {
            delta: 0.0,
            ..PlannerConfig::default()
        }
        .validate()
        .is_err());
        assert!(PlannerConfig {
            horizon: 0,
            ..PlannerConfig::default()
        }
        .validate()
        .is_err());
    }
}
