//! Householder QR, with optional column pivoting for least squares.

use alloc::vec;
use alloc::vec::Vec;

use crate::matrix::ComplexMatrix;
use crate::C64;
#[allow(unused_imports)]
use num_traits::Float;

/// Compact Householder factorization `A P = Q R`.
pub struct HouseholderQr {
    /// R in the upper triangle, reflector tails below the diagonal.
    qr: ComplexMatrix,
    /// Reflector scalars `tau_j`, with `H_j = I − tau_j v_j v_jᴴ` and `v_j[j] = 1`.
    tau: Vec<C64>,
    /// Column permutation: column `j` of `A P` is column `perm[j]` of `A`.
    perm: Vec<usize>,
}

impl HouseholderQr {
    pub fn new(a: &ComplexMatrix) -> Self {
        Self::factor(a, false)
    }

    pub fn with_pivoting(a: &ComplexMatrix) -> Self {
        Self::factor(a, true)
    }

    fn factor(a: &ComplexMatrix, pivot: bool) -> Self {
        let (m, n) = a.shape();
        let mut qr = a.clone();
        let k = m.min(n);
        let mut tau = vec![C64::new(0.0, 0.0); k];
        let mut perm: Vec<usize> = (0..n).collect();
        let mut norms: Vec<f64> = (0..n)
            .map(|j| qr.column(j).iter().map(|z| z.norm_sqr()).sum())
            .collect();
        for j in 0..k {
            if pivot {
                let (best, _) = norms[j..]
                    .iter()
                    .enumerate()
                    .fold(
                        (0, -1.0),
                        |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                    );
                let p = j + best;
                if p != j {
                    for i in 0..m {
                        let t = qr[(i, j)];
                        qr[(i, j)] = qr[(i, p)];
                        qr[(i, p)] = t;
                    }
                    perm.swap(j, p);
                    norms.swap(j, p);
                }
            }
            let xnorm = qr.column(j)[j..]
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt();
            if xnorm == 0.0 {
                continue;
            }
            let x0 = qr[(j, j)];
            let phase = if x0.norm() == 0.0 {
                C64::new(1.0, 0.0)
            } else {
                x0 / x0.norm()
            };
            let beta = -phase * xnorm;
            let v0 = x0 - beta;
            for i in j + 1..m {
                qr[(i, j)] /= v0;
            }
            tau[j] = (beta - x0) / beta;
            qr[(j, j)] = beta;
            for c in j + 1..n {
                let mut s = qr[(j, c)];
                for i in j + 1..m {
                    s += qr[(i, j)].conj() * qr[(i, c)];
                }
                s *= tau[j].conj();
                qr[(j, c)] -= s;
                for i in j + 1..m {
                    let vij = qr[(i, j)];
                    qr[(i, c)] -= s * vij;
                }
                if pivot {
                    norms[c] = qr.column(c)[j + 1..].iter().map(|z| z.norm_sqr()).sum();
                }
            }
        }
        HouseholderQr { qr, tau, perm }
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// The k×n upper-trapezoidal factor R with k = min(m, n).
    pub fn r(&self) -> ComplexMatrix {
        let (m, n) = self.qr.shape();
        let k = m.min(n);
        ComplexMatrix::from_fn(k, n, |i, j| {
            if i <= j {
                self.qr[(i, j)]
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    /// Applies `Qᴴ` to the columns of `b` in place.
    pub fn apply_qh(&self, b: &mut ComplexMatrix) {
        let m = self.qr.rows();
        for j in 0..self.tau.len() {
            let t = self.tau[j];
            if t == C64::new(0.0, 0.0) {
                continue;
            }
            for c in 0..b.cols() {
                let mut s = b[(j, c)];
                for i in j + 1..m {
                    s += self.qr[(i, j)].conj() * b[(i, c)];
                }
                s *= t.conj();
                b[(j, c)] -= s;
                for i in j + 1..m {
                    b[(i, c)] -= s * self.qr[(i, j)];
                }
            }
        }
    }

    /// The thin m×k orthonormal factor Q.
    pub fn q_thin(&self) -> ComplexMatrix {
        let m = self.qr.rows();
        let k = self.tau.len();
        let mut q = ComplexMatrix::zeros(m, k);
        for i in 0..k {
            q[(i, i)] = C64::new(1.0, 0.0);
        }
        for j in (0..k).rev() {
            let t = self.tau[j];
            for c in 0..k {
                let mut s = q[(j, c)];
                for i in j + 1..m {
                    s += self.qr[(i, j)].conj() * q[(i, c)];
                }
                s *= t;
                q[(j, c)] -= s;
                for i in j + 1..m {
                    q[(i, c)] -= s * self.qr[(i, j)];
                }
            }
        }
        q
    }

    /// Numerical rank: number of leading |R_jj| above `rel_tol · |R_00|`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let k = self.tau.len();
        if k == 0 {
            return 0;
        }
        let top = self.qr[(0, 0)].norm();
        if top == 0.0 {
            return 0;
        }
        (0..k)
            .take_while(|&j| self.qr[(j, j)].norm() > rel_tol * top)
            .count()
    }

    /// Basic least-squares solution using the leading `rank` pivoted columns.
    pub fn solve_basic(&self, b: &ComplexMatrix, rank: usize) -> ComplexMatrix {
        let n = self.qr.cols();
        let mut y = b.clone();
        self.apply_qh(&mut y);
        let mut x = ComplexMatrix::zeros(n, b.cols());
        for c in 0..b.cols() {
            for i in (0..rank).rev() {
                let mut s = y[(i, c)];
                for j in i + 1..rank {
                    s -= self.qr[(i, j)] * x[(self.perm[j], c)];
                }
                x[(self.perm[i], c)] = s / self.qr[(i, i)];
            }
        }
        x
    }
}
