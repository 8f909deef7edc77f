//! Compressed scans and scan-to-scan registration.
//!
//! A scan is a downsampled set of 2D landmarks in the sensor frame plus a
//! rotation/translation-invariant signature (a normalised histogram of
//! pairwise landmark distances) used as a cheap similarity gate before the
//! expensive registration attempt.

use serde::{Deserialize, Serialize};

use crate::geom::Pose2;
use crate::linalg::Mat3;
use crate::posegraph::NodeId;
use crate::RobotId;

/// Signature length.
pub const SIGNATURE_BINS: usize = 32;

/// Histogram support: pairwise distances up to this many metres land in the
/// last bin. Twice the default scout range.
const SIGNATURE_RANGE: f64 = 200.0;

/// Per-landmark local descriptor length (distances to the nearest neighbours).
const DESCRIPTOR_LEN: usize = 8;

/// Padding value for descriptors of landmarks with few neighbours.
const DESCRIPTOR_PAD: f64 = 1.0e3;

/// Covariance floor on registration residuals (metres).
const RESIDUAL_FLOOR: f64 = 1e-4;

/// Tunables for the robust registration step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationParams {
    /// Inlier distance threshold (metres).
    pub tau_in: f64,
    /// Minimum inlier count for a valid estimate.
    pub n_min: usize,
    /// Maximum number of minimal 2-point subsets scored.
    pub max_subsets: usize,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            tau_in: 0.5,
            n_min: 4,
            max_subsets: 200,
        }
    }
}

/// Downsampled sensor data taken at one pose-graph node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedScan {
    pub origin_robot: RobotId,
    pub node_id: NodeId,
    /// 2D landmark points in the sensor frame.
    pub landmarks: Vec<(f64, f64)>,
    /// L1-normalised histogram of pairwise landmark distances.
    pub signature: Vec<f64>,
}

impl CompressedScan {
    pub fn new(origin_robot: RobotId, node_id: NodeId, landmarks: Vec<(f64, f64)>) -> Self {
        let signature = signature_of(&landmarks);
        Self {
            origin_robot,
            node_id,
            landmarks,
            signature,
        }
    }
}

fn signature_of(landmarks: &[(f64, f64)]) -> Vec<f64> {
    let mut hist = vec![0.0; SIGNATURE_BINS];
    if landmarks.len() < 2 {
        return hist;
    }
    let mut total = 0.0;
    for i in 0..landmarks.len() {
        for j in (i + 1)..landmarks.len() {
            let d = dist(landmarks[i], landmarks[j]);
            let bin = ((d / SIGNATURE_RANGE) * SIGNATURE_BINS as f64) as usize;
            hist[bin.min(SIGNATURE_BINS - 1)] += 1.0;
            total += 1.0;
        }
    }
    for h in &mut hist {
        *h /= total;
    }
    hist
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// One minus half the L1 distance between signatures, in [0, 1]. Symmetric;
/// 1.0 for identical signatures, 0.0 for disjoint support. Scans with fewer
/// than two landmarks carry no geometry and score 0 against everything.
///
/// Computed as the histogram intersection sum(min(a_i, b_i)), which equals
/// 1 - L1/2 for normalised histograms and is exact at both extremes.
pub fn similarity_score(a: &CompressedScan, b: &CompressedScan) -> f64 {
    if a.landmarks.len() < 2 || b.landmarks.len() < 2 {
        return 0.0;
    }
    if a.signature == b.signature {
        return 1.0;
    }
    let overlap: f64 = a
        .signature
        .iter()
        .zip(&b.signature)
        .map(|(x, y)| x.min(*y))
        .sum();
    overlap.clamp(0.0, 1.0)
}

/// Distances to the nearest neighbours inside the same scan, sorted ascending
/// and padded to a fixed length: rotation invariant, cheap to compare.
fn local_descriptors(landmarks: &[(f64, f64)]) -> Vec<[f64; DESCRIPTOR_LEN]> {
    landmarks
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut ds: Vec<f64> = landmarks
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &q)| dist(p, q))
                .collect();
            ds.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            let mut out = [DESCRIPTOR_PAD; DESCRIPTOR_LEN];
            for (k, d) in ds.into_iter().take(DESCRIPTOR_LEN).enumerate() {
                out[k] = d;
            }
            out
        })
        .collect()
}

fn descriptor_distance(a: &[f64; DESCRIPTOR_LEN], b: &[f64; DESCRIPTOR_LEN]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mutual-nearest-neighbour correspondences between descriptor sets.
fn mutual_matches(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(usize, usize)> {
    let da = local_descriptors(a);
    let db = local_descriptors(b);
    let best_in_b: Vec<usize> = da
        .iter()
        .map(|d| {
            db.iter()
                .enumerate()
                .min_by(|(_, x), (_, y)| {
                    descriptor_distance(d, x)
                        .partial_cmp(&descriptor_distance(d, y))
                        .expect("finite")
                })
                .map(|(j, _)| j)
                .expect("b non-empty")
        })
        .collect();
    let best_in_a: Vec<usize> = db
        .iter()
        .map(|d| {
            da.iter()
                .enumerate()
                .min_by(|(_, x), (_, y)| {
                    descriptor_distance(d, x)
                        .partial_cmp(&descriptor_distance(d, y))
                        .expect("finite")
                })
                .map(|(i, _)| i)
                .expect("a non-empty")
        })
        .collect();
    best_in_b
        .iter()
        .enumerate()
        .filter(|&(i, &j)| best_in_a[j] == i)
        .map(|(i, &j)| (i, j))
        .collect()
}

/// Rigid transform (rotation + translation) fitted on matched pairs by
/// centroid alignment and orthogonal Procrustes.
fn procrustes(pairs: &[((f64, f64), (f64, f64))]) -> Option<Pose2> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let (mut ax, mut ay, mut bx, mut by) = (0.0, 0.0, 0.0, 0.0);
    for ((pax, pay), (pbx, pby)) in pairs {
        ax += pax;
        ay += pay;
        bx += pbx;
        by += pby;
    }
    let (ax, ay, bx, by) = (ax / n, ay / n, bx / n, by / n);
    let mut s_cos = 0.0;
    let mut s_sin = 0.0;
    let mut spread = 0.0;
    for ((pax, pay), (pbx, pby)) in pairs {
        let (ux, uy) = (pax - ax, pay - ay);
        let (vx, vy) = (pbx - bx, pby - by);
        s_cos += ux * vx + uy * vy;
        s_sin += ux * vy - uy * vx;
        spread += ux * ux + uy * uy;
    }
    // Coincident points leave the rotation unobservable.
    if spread < 1e-12 {
        return None;
    }
    let theta = s_sin.atan2(s_cos);
    let (s, c) = theta.sin_cos();
    let tx = bx - (c * ax - s * ay);
    let ty = by - (s * ax + c * ay);
    Some(Pose2::new(tx, ty, theta))
}

fn apply(t: &Pose2, p: (f64, f64)) -> (f64, f64) {
    t.transform_point(p)
}

/// Nearest landmark of `b` to point `p`; (index, distance).
fn nearest(b: &[(f64, f64)], p: (f64, f64)) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, &q) in b.iter().enumerate() {
        let d = dist(p, q);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn count_inliers(a: &[(f64, f64)], b: &[(f64, f64)], t: &Pose2, tau: f64) -> (usize, f64) {
    let mut count = 0;
    let mut sq_sum = 0.0;
    for &p in a {
        let (_, d) = nearest(b, apply(t, p));
        if d <= tau {
            count += 1;
            sq_sum += d * d;
        }
    }
    (count, sq_sum)
}

struct XorShift64(u64);

impl XorShift64 {
    fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }
}

/// Estimate the rigid transform mapping scan `a`'s landmarks onto scan `b`'s.
///
/// Correspondence by mutual-nearest-neighbour descriptor matching, then
/// minimal-subset consensus over 2-point fits scored by inlier count, then a
/// Procrustes refinement on the consensus inlier set. Returns None (not an
/// error) on degenerate geometry or fewer than `n_min` inliers. Deterministic:
/// the subset schedule is seeded from the two node ids.
pub fn estimate_relative_pose(
    a: &CompressedScan,
    b: &CompressedScan,
    params: &RegistrationParams,
) -> Option<(Pose2, Mat3)> {
    let la = &a.landmarks;
    let lb = &b.landmarks;
    if la.len() < 2 || lb.len() < 2 {
        return None;
    }
    let matches = mutual_matches(la, lb);
    if matches.len() < 2 {
        return None;
    }

    // Candidate minimal subsets: all pairs when few, a seeded pseudo-random
    // schedule otherwise. Both are deterministic for identical inputs.
    let m = matches.len();
    let mut subsets: Vec<(usize, usize)> = Vec::new();
    if m * (m - 1) / 2 <= params.max_subsets {
        for i in 0..m {
            for j in (i + 1)..m {
                subsets.push((i, j));
            }
        }
    } else {
        let mut rng = XorShift64(
            a.node_id.raw().rotate_left(17) ^ b.node_id.raw() ^ 0x9e3779b97f4a7c15,
        );
        while subsets.len() < params.max_subsets {
            let i = (rng.next() % m as u64) as usize;
            let j = (rng.next() % m as u64) as usize;
            if i != j {
                subsets.push((i.min(j), i.max(j)));
            }
        }
    }

    let mut best: Option<(usize, f64, Pose2)> = None;
    for (si, sj) in subsets {
        let (ia, ja) = matches[si];
        let (ib, jb) = matches[sj];
        let pa1 = la[ia];
        let pa2 = la[ib];
        if dist(pa1, pa2) < 1e-9 {
            continue;
        }
        let Some(t) = procrustes(&[(pa1, lb[ja]), (pa2, lb[jb])]) else {
            continue;
        };
        let (count, sq) = count_inliers(la, lb, &t, params.tau_in);
        let better = match &best {
            None => true,
            Some((bc, bsq, _)) => count > *bc || (count == *bc && sq < *bsq),
        };
        if better {
            best = Some((count, sq, t));
        }
    }
    let (count, _, mut transform) = best?;
    if count < params.n_min {
        return None;
    }

    // Refine: re-associate by nearest neighbour under the current transform
    // and re-fit, a few times.
    let mut inlier_pairs: Vec<((f64, f64), (f64, f64))> = Vec::new();
    for _ in 0..3 {
        inlier_pairs.clear();
        for &p in la {
            let q = apply(&transform, p);
            let (j, d) = nearest(lb, q);
            if d <= params.tau_in {
                inlier_pairs.push((p, lb[j]));
            }
        }
        if inlier_pairs.len() < 2 {
            return None;
        }
        transform = procrustes(&inlier_pairs)?;
    }
    if inlier_pairs.len() < params.n_min {
        return None;
    }

    // Covariance from the inlier residual scatter, floored so the resulting
    // information matrix stays finite for noiseless data.
    let n = inlier_pairs.len() as f64;
    let mut sq_sum = 0.0;
    let mut spread = 0.0;
    let (mut cx, mut cy) = (0.0, 0.0);
    for (p, _) in &inlier_pairs {
        cx += p.0;
        cy += p.1;
    }
    let (cx, cy) = (cx / n, cy / n);
    for (p, q) in &inlier_pairs {
        let tp = apply(&transform, *p);
        sq_sum += (tp.0 - q.0).powi(2) + (tp.1 - q.1).powi(2);
        spread += (p.0 - cx).powi(2) + (p.1 - cy).powi(2);
    }
    let sigma_sq = (sq_sum / (2.0 * n)).max(RESIDUAL_FLOOR * RESIDUAL_FLOOR);
    let var_t = sigma_sq / n;
    let var_th = sigma_sq / spread.max(1e-9);
    let covariance = Mat3::diag(var_t, var_t, var_th);
    Some((transform, covariance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive, Stream};
    use rand::Rng;

    fn nid(robot: u16, seq: u32) -> NodeId {
        NodeId::new(RobotId(robot), seq)
    }

    fn scan(robot: u16, seq: u32, landmarks: Vec<(f64, f64)>) -> CompressedScan {
        CompressedScan::new(RobotId(robot), nid(robot, seq), landmarks)
    }

    fn field(n: usize, seed: u64, extent: f64) -> Vec<(f64, f64)> {
        let mut rng = derive(seed, 0, Stream::ScanNoise, 0);
        (0..n)
            .map(|_| (rng.gen_range(-extent..extent), rng.gen_range(-extent..extent)))
            .collect()
    }

    fn transformed(points: &[(f64, f64)], t: &Pose2) -> Vec<(f64, f64)> {
        points.iter().map(|&p| t.transform_point(p)).collect()
    }

    #[test]
    fn identical_scans_score_one() {
        let a = scan(0, 0, field(20, 1, 30.0));
        let b = scan(1, 0, a.landmarks.clone());
        assert_eq!(similarity_score(&a, &b), 1.0);
        assert_eq!(similarity_score(&a, &a), 1.0);
    }

    #[test]
    fn disjoint_support_scores_zero() {
        // Tight cluster: all pairwise distances in the first bin; spread
        // points: all distances far out. Histogram supports are disjoint.
        let a = scan(0, 0, vec![(0.0, 0.0), (0.1, 0.0), (0.0, 0.1)]);
        let b = scan(1, 0, vec![(0.0, 0.0), (100.0, 0.0), (0.0, 100.0)]);
        assert_eq!(similarity_score(&a, &b), 0.0);
    }

    #[test]
    fn empty_scans_score_zero() {
        let e1 = scan(0, 0, vec![]);
        let e2 = scan(1, 0, vec![]);
        let full = scan(2, 0, field(10, 2, 20.0));
        assert_eq!(similarity_score(&e1, &e2), 0.0);
        assert_eq!(similarity_score(&e1, &full), 0.0);
        assert_eq!(similarity_score(&full, &e1), 0.0);
    }

    #[test]
    fn similarity_is_symmetric() {
        let a = scan(0, 0, field(15, 3, 25.0));
        let b = scan(1, 0, field(15, 4, 25.0));
        assert_eq!(similarity_score(&a, &b), similarity_score(&b, &a));
    }

    #[test]
    fn rotation_leaves_similarity_at_one() {
        let pts = field(18, 5, 20.0);
        let a = scan(0, 0, pts.clone());
        for angle in [0.3, 1.2, 2.9, -2.0] {
            let rot = Pose2::new(0.0, 0.0, angle);
            let b = scan(1, 0, transformed(&pts, &rot));
            // Oracle: recompute the histogram of the rotated cloud; pairwise
            // distances are invariant so the signatures must match exactly up
            // to floating-point in the distance computation.
            let s = similarity_score(&a, &b);
            assert!(s > 1.0 - 1e-9, "angle {angle}: score {s}");
        }
    }

    #[test]
    fn recovers_known_transform_noiseless() {
        let pts = field(24, 6, 15.0);
        let truth = Pose2::new(1.0, 2.0, std::f64::consts::FRAC_PI_2);
        let a = scan(0, 0, pts.clone());
        let b = scan(1, 0, transformed(&pts, &truth));
        let (t, cov) = estimate_relative_pose(&a, &b, &RegistrationParams::default()).unwrap();
        assert!((t.x - truth.x).abs() < 1e-9, "tx {}", t.x);
        assert!((t.y - truth.y).abs() < 1e-9, "ty {}", t.y);
        assert!((t.theta - truth.theta).abs() < 1e-9, "theta {}", t.theta);
        assert!(cov.is_spd(1e-12));
    }

    #[test]
    fn under_two_landmarks_is_empty() {
        let a = scan(0, 0, vec![(1.0, 1.0)]);
        let b = scan(1, 0, field(10, 7, 10.0));
        assert!(estimate_relative_pose(&a, &b, &RegistrationParams::default()).is_none());
        assert!(estimate_relative_pose(&b, &a, &RegistrationParams::default()).is_none());
    }

    #[test]
    fn robust_to_half_spurious_landmarks() {
        let pts = field(20, 8, 15.0);
        let truth = Pose2::new(-2.0, 0.5, 0.8);
        let mut b_pts = transformed(&pts, &truth);
        // 50% spurious landmarks appended to b.
        let mut rng = derive(99, 0, Stream::ScanNoise, 1);
        for _ in 0..10 {
            b_pts.push((rng.gen_range(-25.0..25.0), rng.gen_range(-25.0..25.0)));
        }
        let a = scan(0, 0, pts);
        let b = scan(1, 0, b_pts);
        let (t, _) = estimate_relative_pose(&a, &b, &RegistrationParams::default()).unwrap();
        assert!((t.x - truth.x).abs() < 1e-6);
        assert!((t.y - truth.y).abs() < 1e-6);
        assert!((t.theta - truth.theta).abs() < 1e-6);
    }

    #[test]
    fn estimate_is_deterministic() {
        let pts = field(40, 10, 20.0);
        let truth = Pose2::new(3.0, -1.0, -0.4);
        let a = scan(0, 3, pts.clone());
        let b = scan(1, 5, transformed(&pts, &truth));
        let p = RegistrationParams::default();
        let r1 = estimate_relative_pose(&a, &b, &p).unwrap();
        let r2 = estimate_relative_pose(&a, &b, &p).unwrap();
        assert_eq!(r1.0, r2.0);
    }

    #[test]
    fn degenerate_coincident_points_rejected() {
        let a = scan(0, 0, vec![(1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]);
        let b = scan(1, 0, vec![(2.0, 2.0), (2.0, 2.0), (2.0, 2.0), (2.0, 2.0)]);
        assert!(estimate_relative_pose(&a, &b, &RegistrationParams::default()).is_none());
    }
}
