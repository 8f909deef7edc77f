//! Minimal dense 3x3 and block-sparse linear algebra for the pose-graph solver.
//!
//! Pose graphs here are odometry chains plus a handful of loop closures, so the
//! Gauss-Newton normal matrix is block-tridiagonal with a few extra blocks. An
//! up-looking block Cholesky over that pattern solves it in effectively linear
//! time without pulling in a sparse-matrix dependency.

use std::collections::BTreeMap;

pub type Vec3 = [f64; 3];

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub fn zeros() -> Self {
        Mat3([[0.0; 3]; 3])
    }

    pub fn identity() -> Self {
        Mat3::diag(1.0, 1.0, 1.0)
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        let mut m = Mat3::zeros();
        m.0[0][0] = a;
        m.0[1][1] = b;
        m.0[2][2] = c;
        m
    }

    pub fn transpose(&self) -> Mat3 {
        let mut t = Mat3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                t.0[c][r] = self.0[r][c];
            }
        }
        t
    }

    pub fn mul(&self, other: &Mat3) -> Mat3 {
        let mut out = Mat3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += self.0[r][k] * other.0[k][c];
                }
                out.0[r][c] = s;
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for r in 0..3 {
            out[r] = self.0[r][0] * v[0] + self.0[r][1] * v[1] + self.0[r][2] * v[2];
        }
        out
    }

    pub fn add_assign(&mut self, other: &Mat3) {
        for r in 0..3 {
            for c in 0..3 {
                self.0[r][c] += other.0[r][c];
            }
        }
    }

    pub fn sub_assign(&mut self, other: &Mat3) {
        for r in 0..3 {
            for c in 0..3 {
                self.0[r][c] -= other.0[r][c];
            }
        }
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = *self;
        for r in 0..3 {
            for c in 0..3 {
                out.0[r][c] *= s;
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.0[0][1] - self.0[1][0]).abs() <= tol
            && (self.0[0][2] - self.0[2][0]).abs() <= tol
            && (self.0[1][2] - self.0[2][1]).abs() <= tol
    }

    /// Lower-triangular Cholesky factor; None when not positive definite.
    pub fn cholesky(&self) -> Option<Mat3> {
        let a = &self.0;
        let mut l = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return None;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        Some(Mat3(l))
    }

    /// True when symmetric and positive definite.
    pub fn is_spd(&self, tol: f64) -> bool {
        self.is_symmetric(tol) && self.cholesky().is_some()
    }

    /// Inverse of a symmetric positive-definite matrix, via Cholesky.
    pub fn inverse_spd(&self) -> Option<Mat3> {
        let l = self.cholesky()?;
        let mut inv = Mat3::zeros();
        for col in 0..3 {
            let mut e = [0.0; 3];
            e[col] = 1.0;
            let y = forward_substitute(&l, &e);
            let x = backward_substitute_transpose(&l, &y);
            for r in 0..3 {
                inv.0[r][col] = x[r];
            }
        }
        Some(inv)
    }
}

/// Solve L y = b for lower-triangular L.
fn forward_substitute(l: &Mat3, b: &Vec3) -> Vec3 {
    let l = &l.0;
    let mut y = [0.0; 3];
    y[0] = b[0] / l[0][0];
    y[1] = (b[1] - l[1][0] * y[0]) / l[1][1];
    y[2] = (b[2] - l[2][0] * y[0] - l[2][1] * y[1]) / l[2][2];
    y
}

/// Solve L^T x = y for lower-triangular L.
fn backward_substitute_transpose(l: &Mat3, y: &Vec3) -> Vec3 {
    let l = &l.0;
    let mut x = [0.0; 3];
    x[2] = y[2] / l[2][2];
    x[1] = (y[1] - l[2][1] * x[2]) / l[1][1];
    x[0] = (y[0] - l[1][0] * x[1] - l[2][0] * x[2]) / l[0][0];
    x
}

/// Solve L Z = B column-wise for lower-triangular L and 3x3 B.
fn forward_solve_mat(l: &Mat3, b: &Mat3) -> Mat3 {
    let mut z = Mat3::zeros();
    for col in 0..3 {
        let rhs = [b.0[0][col], b.0[1][col], b.0[2][col]];
        let y = forward_substitute(l, &rhs);
        for r in 0..3 {
            z.0[r][col] = y[r];
        }
    }
    z
}

/// Symmetric block matrix stored as its lower triangle, block row by block row.
#[derive(Debug, Clone)]
pub struct BlockSparseSym {
    n: usize,
    rows: Vec<BTreeMap<usize, Mat3>>,
}

impl BlockSparseSym {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            rows: vec![BTreeMap::new(); n],
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.n
    }

    /// Accumulate into block (i, j); only the lower triangle (j <= i) is kept,
    /// callers pass the transposed block for the mirror entry themselves.
    pub fn add_block(&mut self, i: usize, j: usize, m: &Mat3) {
        debug_assert!(j <= i, "store lower triangle only");
        self.rows[i]
            .entry(j)
            .or_insert_with(Mat3::zeros)
            .add_assign(m);
    }

    /// Solve H x = rhs via up-looking block Cholesky. Returns None when the
    /// matrix is not positive definite.
    pub fn cholesky_solve(&self, rhs: &[Vec3]) -> Option<Vec<Vec3>> {
        assert_eq!(rhs.len(), self.n);
        let n = self.n;
        // l_rows[i][j] = L_ij (j < i); l_diag[i] = L_ii.
        let mut l_rows: Vec<BTreeMap<usize, Mat3>> = vec![BTreeMap::new(); n];
        let mut l_diag: Vec<Mat3> = Vec::with_capacity(n);
        // col_lists[j] = rows m > j with L_mj nonzero, ascending.
        let mut col_lists: Vec<Vec<usize>> = vec![Vec::new(); n];

        for i in 0..n {
            // work[j] accumulates B_j = H[i][j]^T minus the partial sums of the
            // forward substitution L Z = B, where L_ij = Z_j^T.
            let mut work: BTreeMap<usize, Mat3> = BTreeMap::new();
            let mut diag = Mat3::zeros();
            for (&j, h) in &self.rows[i] {
                if j == i {
                    diag = *h;
                } else {
                    work.insert(j, h.transpose());
                }
            }
            while let Some((&j, _)) = work.iter().next() {
                let b = work.remove(&j).expect("key just observed");
                let z = forward_solve_mat(&l_diag[j], &b);
                // Propagate to later columns of this row through column j of L.
                for &m in &col_lists[j] {
                    if m >= i {
                        break;
                    }
                    let contrib = l_rows[m][&j].mul(&z);
                    work.entry(m)
                        .or_insert_with(Mat3::zeros)
                        .sub_assign(&contrib);
                }
                let lij = z.transpose();
                diag.sub_assign(&lij.mul(&lij.transpose()));
                l_rows[i].insert(j, lij);
            }
            let lii = diag.cholesky()?;
            for &j in l_rows[i].keys() {
                col_lists[j].push(i);
            }
            l_diag.push(lii);
        }

        // Forward solve L y = rhs.
        let mut y: Vec<Vec3> = Vec::with_capacity(n);
        for i in 0..n {
            let mut b = rhs[i];
            for (&j, lij) in &l_rows[i] {
                let t = lij.mul_vec(&y[j]);
                b[0] -= t[0];
                b[1] -= t[1];
                b[2] -= t[2];
            }
            y.push(forward_substitute(&l_diag[i], &b));
        }

        // Backward solve L^T x = y.
        let mut x: Vec<Vec3> = vec![[0.0; 3]; n];
        for i in (0..n).rev() {
            let mut b = y[i];
            for &m in &col_lists[i] {
                let t = l_rows[m][&i].transpose().mul_vec(&x[m]);
                b[0] -= t[0];
                b[1] -= t[1];
                b[2] -= t[2];
            }
            x[i] = backward_substitute_transpose(&l_diag[i], &b);
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_from_blocks(h: &BlockSparseSym) -> Vec<Vec<f64>> {
        let n = h.n * 3;
        let mut d = vec![vec![0.0; n]; n];
        for (bi, row) in h.rows.iter().enumerate() {
            for (&bj, m) in row {
                for r in 0..3 {
                    for c in 0..3 {
                        d[bi * 3 + r][bj * 3 + c] = m.0[r][c];
                        d[bj * 3 + c][bi * 3 + r] = m.0[r][c];
                    }
                }
            }
        }
        d
    }

    /// Dense Cholesky solve used as the oracle.
    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut l = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i][k] * y[k];
            }
            y[i] = s / l[i][i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k][i] * x[k];
            }
            x[i] = s / l[i][i];
        }
        x
    }

    fn random_spd_chain(rng: &mut ChaCha8Rng, n: usize, closures: usize) -> BlockSparseSym {
        let mut h = BlockSparseSym::new(n);
        let rand_block = |rng: &mut ChaCha8Rng| {
            let mut m = Mat3::zeros();
            for r in 0..3 {
                for c in 0..3 {
                    m.0[r][c] = rng.gen_range(-1.0..1.0);
                }
            }
            m
        };
        // SPD via A = sum of J^T J contributions along a chain.
        for i in 0..n {
            let j = rand_block(rng);
            h.add_block(i, i, &j.transpose().mul(&j));
            // Keep the diagonal safely dominant.
            h.add_block(i, i, &Mat3::diag(3.0, 3.0, 3.0));
            if i > 0 {
                let off = rand_block(rng).scale(0.2);
                h.add_block(i, i - 1, &off);
            }
        }
        if n >= 4 {
            for _ in 0..closures {
                let a = rng.gen_range(0..n - 3);
                let b = rng.gen_range(a + 2..n);
                let off = rand_block(rng).scale(0.1);
                h.add_block(b, a, &off);
            }
        }
        h
    }

    #[test]
    fn mat3_cholesky_inverse() {
        let m = Mat3([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]);
        let inv = m.inverse_spd().unwrap();
        let id = m.mul(&inv);
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((id.0[r][c] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn non_spd_rejected() {
        let m = Mat3::diag(1.0, -1.0, 1.0);
        assert!(m.cholesky().is_none());
        assert!(!m.is_spd(1e-9));
    }

    #[test]
    fn block_solve_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let n = 2 + (trial % 9);
            let h = random_spd_chain(&mut rng, n, trial % 3);
            let rhs: Vec<Vec3> = (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect();
            let x = h.cholesky_solve(&rhs).expect("solvable");
            let dense = dense_from_blocks(&h);
            let flat: Vec<f64> = rhs.iter().flatten().copied().collect();
            let want = dense_solve(&dense, &flat);
            for (i, xi) in x.iter().enumerate() {
                for r in 0..3 {
                    assert!(
                        (xi[r] - want[i * 3 + r]).abs() < 1e-8,
                        "trial {trial} block {i} row {r}: {} vs {}",
                        xi[r],
                        want[i * 3 + r]
                    );
                }
            }
        }
    }
}
