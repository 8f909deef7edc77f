//! Per-robot occupancy-grid filter over target presence.
//!
//! Each robot fuses its own detections and the ones broadcast by teammates
//! into an independent per-cell Bernoulli filter in log-odds form. Log-odds
//! are accumulated in 64-bit fixed point (scale 2^-32) so that fusing any
//! permutation of the same detection multiset yields bit-identical state;
//! clamping to +-LOG_ODDS_MAX happens on read, never inside the accumulator.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Cell;
use crate::world::SensorKind;
use crate::RobotId;

/// Log-odds clamp: keeps the filter responsive after long evidence streams.
pub const LOG_ODDS_MAX: f64 = 13.815510557964274; // ln(1e6)

/// Per-detection log-likelihood-ratio cap. Deterministic confirmation
/// channels (p_detect 1, p_false 0) produce infinite ratios; capping keeps
/// the fixed-point accumulator finite and exactly commutative. 40 nats is
/// far beyond the read clamp, so behaviour is unchanged.
pub const LLR_CAP: f64 = 40.0;

/// Default per-cell prior probability of target presence.
pub const DEFAULT_PRIOR: f64 = 0.01;

const FIXED_SCALE: f64 = 4294967296.0; // 2^32

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BeliefError {
    #[error("cell ({x}, {y}) outside {width}x{height} belief grid")]
    OutOfBounds { x: u16, y: u16, width: u16, height: u16 },
}

/// Classifier outcome for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Positive,
    Negative,
}

/// One classifier outcome for a cell, attributed to a robot, sensor and tick.
///
/// Detections carry their channel parameters so receivers need no sensor
/// registry; `(origin_robot, seq)` is globally unique and is the dedup key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub origin_robot: RobotId,
    pub seq: u64,
    pub cell: Cell,
    pub outcome: Outcome,
    pub sensor_kind: SensorKind,
    pub effective_p_detect: f64,
    pub p_false: f64,
    pub tick: u64,
}

impl Detection {
    pub fn id(&self) -> (RobotId, u64) {
        (self.origin_robot, self.seq)
    }

    pub fn channel_valid(&self) -> bool {
        0.0 <= self.p_false
            && self.p_false < self.effective_p_detect
            && self.effective_p_detect <= 1.0
    }

    /// Log-likelihood ratio contributed by this detection.
    pub fn log_likelihood_ratio(&self) -> f64 {
        match self.outcome {
            Outcome::Positive => (self.effective_p_detect / self.p_false).ln(),
            Outcome::Negative => ((1.0 - self.effective_p_detect) / (1.0 - self.p_false)).ln(),
        }
    }
}

/// Per-cell probability of target presence in log-odds form.
#[derive(Debug, Clone)]
pub struct OccupancyBelief {
    width: u16,
    height: u16,
    prior: f64,
    cells: Vec<i64>,
    applied: HashSet<(RobotId, u64)>,
    confirmed: BTreeSet<Cell>,
}

impl OccupancyBelief {
    pub fn new(width: u16, height: u16, prior: f64) -> Self {
        assert!(prior > 0.0 && prior < 1.0, "prior must be in (0,1)");
        let prior_fixed = to_fixed((prior / (1.0 - prior)).ln());
        Self {
            width,
            height,
            prior,
            cells: vec![prior_fixed; width as usize * height as usize],
            applied: HashSet::new(),
            confirmed: BTreeSet::new(),
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    fn idx(&self, cell: Cell) -> Result<usize, BeliefError> {
        if cell.x >= self.width || cell.y >= self.height {
            return Err(BeliefError::OutOfBounds {
                x: cell.x,
                y: cell.y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(cell.y as usize * self.width as usize + cell.x as usize)
    }

    /// Fuse one detection. Already-seen ids are a no-op (exactly-once).
    pub fn update(&mut self, det: &Detection) -> Result<(), BeliefError> {
        let idx = self.idx(det.cell)?;
        if !self.applied.insert(det.id()) {
            return Ok(());
        }
        let llr = det.log_likelihood_ratio().clamp(-LLR_CAP, LLR_CAP);
        self.cells[idx] = self.cells[idx].saturating_add(to_fixed(llr));
        Ok(())
    }

    /// Fuse a batch; equivalent to folding `update` in any order.
    pub fn fuse_remote<'a, I>(&mut self, detections: I) -> Result<(), BeliefError>
    where
        I: IntoIterator<Item = &'a Detection>,
    {
        for det in detections {
            self.update(det)?;
        }
        Ok(())
    }

    pub fn has_applied(&self, id: (RobotId, u64)) -> bool {
        self.applied.contains(&id)
    }

    /// Mark a cell as holding a confirmed target: it reads as the clamp
    /// maximum from now on. Kept as an overlay so the operation commutes with
    /// detection fusion regardless of arrival order.
    pub fn confirm_cell(&mut self, cell: Cell) -> Result<(), BeliefError> {
        self.idx(cell)?;
        self.confirmed.insert(cell);
        Ok(())
    }

    pub fn is_confirmed(&self, cell: Cell) -> bool {
        self.confirmed.contains(&cell)
    }

    pub fn confirmed_cells(&self) -> impl Iterator<Item = &Cell> {
        self.confirmed.iter()
    }

    /// Clamped log-odds of a cell.
    pub fn log_odds(&self, cell: Cell) -> Result<f64, BeliefError> {
        let idx = self.idx(cell)?;
        if self.confirmed.contains(&cell) {
            return Ok(LOG_ODDS_MAX);
        }
        Ok(from_fixed_clamped(self.cells[idx]))
    }

    /// Posterior probability: logistic of the clamped log-odds.
    pub fn posterior_prob(&self, cell: Cell) -> Result<f64, BeliefError> {
        Ok(logistic(self.log_odds(cell)?))
    }

    /// Total binary entropy over the grid, in bits.
    pub fn entropy_bits(&self) -> f64 {
        let mut sum = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let cell = Cell::new(x, y);
                let p = self.posterior_prob(cell).expect("in bounds");
                sum += binary_entropy_bits(p);
            }
        }
        sum
    }

    /// Raw fixed-point accumulator, row-major. Exact (unclamped) state; two
    /// beliefs that fused the same detection multiset compare equal here.
    pub fn raw_cells(&self) -> &[i64] {
        &self.cells
    }

    /// Dense CSV grid of posterior probabilities, one row per grid row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for y in 0..self.height {
            for x in 0..self.width {
                if x > 0 {
                    write!(w, ",")?;
                }
                let p = self.posterior_prob(Cell::new(x, y)).expect("in bounds");
                write!(w, "{p}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Compact binary snapshot: row-major float32 posterior probabilities,
    /// little endian.
    pub fn to_f32_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.cells.len() * 4);
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.posterior_prob(Cell::new(x, y)).expect("in bounds") as f32;
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }
}

fn to_fixed(v: f64) -> i64 {
    (v * FIXED_SCALE).round() as i64
}

fn from_fixed_clamped(v: i64) -> f64 {
    (v as f64 / FIXED_SCALE).clamp(-LOG_ODDS_MAX, LOG_ODDS_MAX)
}

pub fn logistic(log_odds: f64) -> f64 {
    1.0 / (1.0 + (-log_odds).exp())
}

/// Binary entropy in bits; 0 at p in {0, 1}.
pub fn binary_entropy_bits(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}
