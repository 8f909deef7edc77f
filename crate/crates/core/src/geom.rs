//! Planar geometry: SE(2) poses and grid cells.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wrap an angle to the half-open interval (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI);
    if r == 0.0 {
        PI
    } else {
        r - PI
    }
}

/// A planar pose: position in metres, heading in radians.
///
/// The heading is kept normalised to (-pi, pi] by every constructor and
/// composition operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    /// Compose two poses: self followed by `other` expressed in self's frame.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), -self.theta)
    }

    /// Relative pose of `other` expressed in self's frame: self^-1 * other.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    /// Map a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + c * p.0 - s * p.1, self.y + s * p.0 + c * p.1)
    }

    /// Map a point from the parent frame into this pose's local frame.
    pub fn inverse_transform_point(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let dx = p.0 - self.x;
        let dy = p.1 - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn translation_distance(&self, other: &Pose2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn rotation_distance(&self, other: &Pose2) -> f64 {
        wrap_angle(self.theta - other.theta).abs()
    }
}

/// A grid cell address (column x, row y).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct Cell {
    pub x: u16,
    pub y: u16,
}

impl Cell {
    pub fn new(x: u16, y: u16) -> Self {
        Self { x, y }
    }

    /// Chebyshev (8-connected) distance between cells.
    pub fn chebyshev(&self, other: &Cell) -> u16 {
        let dx = (self.x as i32 - other.x as i32).unsigned_abs() as u16;
        let dy = (self.y as i32 - other.y as i32).unsigned_abs() as u16;
        dx.max(dy)
    }

    /// True if `other` is this cell or one of its 8 neighbours.
    pub fn adjacent8_or_equal(&self, other: &Cell) -> bool {
        self.chebyshev(other) <= 1
    }
}
