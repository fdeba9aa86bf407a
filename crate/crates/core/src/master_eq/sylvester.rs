//! Dense complex Sylvester solver for `A X + X A^dagger = C`.
//!
//! `A` is reduced once to complex Schur form `A = Q T Q^dagger`; each right
//! hand side then costs two similarity transforms and one triangular sweep.

use nalgebra::linalg::Schur;

use crate::{CMatrix, Error, Result, C64};

const SCHUR_EPS: f64 = 1e-15;
const SCHUR_MAX_ITERS: usize = 10_000;

pub struct SylvesterSolver {
    q: CMatrix,
    t: CMatrix,
    /// Pairs `(i, j)` with `T_ii + conj(T_jj)` numerically zero. Their
    /// components are set to zero, which selects the solution orthogonal to
    /// undamped modes.
    dark_pairs: usize,
    dark_tol: f64,
}

impl SylvesterSolver {
    pub fn new(a: CMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("Sylvester operator must be square, got {}x{}", n, a.ncols())));
        }
        let schur = Schur::try_new(a, SCHUR_EPS, SCHUR_MAX_ITERS)
            .ok_or_else(|| Error::Decomposition("complex Schur iteration did not converge".into()))?;
        let (q, mut t) = schur.unpack();
        // Discard round-off below the diagonal.
        for j in 0..n {
            for i in j + 1..n {
                t[(i, j)] = C64::new(0.0, 0.0);
            }
        }
        let scale = (0..n).map(|i| t[(i, i)].norm()).fold(1.0, f64::max);
        let dark_tol = 1e-12 * scale;
        let mut dark_pairs = 0;
        for i in 0..n {
            for j in 0..n {
                if (t[(i, i)] + t[(j, j)].conj()).norm() <= dark_tol {
                    dark_pairs += 1;
                }
            }
        }
        Ok(SylvesterSolver { q, t, dark_pairs, dark_tol })
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn dark_pairs(&self) -> usize {
        self.dark_pairs
    }

    /// Solve `A X + X A^dagger = C`.
    pub fn solve(&self, c: &CMatrix) -> CMatrix {
        let ct = self.q.adjoint() * c * &self.q;
        let y = self.solve_triangular(ct);
        &self.q * y * self.q.adjoint()
    }

    /// Diagonal entries `rows` of the solution for `C = e_l e_l^T`.
    pub fn unit_source_diagonal(&self, l: usize, rows: &[usize]) -> Vec<f64> {
        let n = self.dim();
        let u: Vec<C64> = (0..n).map(|k| self.q[(l, k)].conj()).collect();
        let ct = CMatrix::from_fn(n, n, |i, j| u[i] * u[j].conj());
        let y = self.solve_triangular(ct);
        rows.iter()
            .map(|&m| {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..n {
                    let qmj = self.q[(m, j)].conj();
                    let mut w = C64::new(0.0, 0.0);
                    for i in 0..n {
                        w += self.q[(m, i)] * y[(i, j)];
                    }
                    acc += w * qmj;
                }
                acc.re
            })
            .collect()
    }

    /// Solve `T Y + Y T^dagger = C` for upper-triangular `T`, column by column
    /// from the last one.
    fn solve_triangular(&self, mut y: CMatrix) -> CMatrix {
        let n = self.dim();
        let t = self.t.as_slice();
        let ys = y.as_mut_slice();
        for j in (0..n).rev() {
            let lam_j = t[j * n + j].conj();
            let (head, tail) = ys.split_at_mut(j * n);
            let col = &mut tail[..n];
            for i in (0..n).rev() {
                let den = t[i * n + i] + lam_j;
                let yi = if den.norm() > self.dark_tol { col[i] / den } else { C64::new(0.0, 0.0) };
                col[i] = yi;
                if yi != C64::new(0.0, 0.0) {
                    let tcol = &t[i * n..i * n + i];
                    for (c, &tr) in col[..i].iter_mut().zip(tcol) {
                        *c -= tr * yi;
                    }
                }
            }
            // Columns left of j pick up -conj(T[jp, j]) * y_j.
            let tcol_j = &t[j * n..j * n + j];
            for (jp, &tj) in tcol_j.iter().enumerate() {
                let f = tj.conj();
                if f == C64::new(0.0, 0.0) {
                    continue;
                }
                let dst = &mut head[jp * n..(jp + 1) * n];
                for (d, &s) in dst.iter_mut().zip(col.iter()) {
                    *d -= f * s;
                }
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn solves_random_stable_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 12;
        let mut a = random_matrix(n, &mut rng);
        for i in 0..n {
            a[(i, i)] += C64::new(4.0, 0.0);
        }
        let c = random_matrix(n, &mut rng);
        let s = SylvesterSolver::new(a.clone()).unwrap();
        let x = s.solve(&c);
        let r = &a * &x + &x * a.adjoint() - &c;
        assert!(crate::max_abs(&r) < 1e-12, "{}", crate::max_abs(&r));
        assert_eq!(s.dark_pairs(), 0);
    }

    #[test]
    fn unit_source_diagonal_matches_full_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 9;
        let mut a = random_matrix(n, &mut rng);
        for i in 0..n {
            a[(i, i)] += C64::new(3.0, 0.0);
        }
        let s = SylvesterSolver::new(a).unwrap();
        let mut e = CMatrix::zeros(n, n);
        e[(4, 4)] = C64::new(1.0, 0.0);
        let x = s.solve(&e);
        let d = s.unit_source_diagonal(4, &[0, 4, 8]);
        for (k, &m) in [0usize, 4, 8].iter().enumerate() {
            assert!((x[(m, m)].re - d[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn undamped_modes_are_projected_out() {
        // A = i diag(1, 2) + diag(0, 1): the (0,0) pair is undamped.
        let mut a = CMatrix::zeros(2, 2);
        a[(0, 0)] = C64::new(0.0, 1.0);
        a[(1, 1)] = C64::new(1.0, 2.0);
        let s = SylvesterSolver::new(a).unwrap();
        assert_eq!(s.dark_pairs(), 1);
        let mut c = CMatrix::zeros(2, 2);
        c[(1, 1)] = C64::new(2.0, 0.0);
        let x = s.solve(&c);
        assert!((x[(1, 1)].re - 1.0).abs() < 1e-14);
        assert!(x[(0, 0)].norm() < 1e-14);
    }
}
