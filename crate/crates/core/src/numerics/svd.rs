//! One-sided Jacobi SVD (Hestenes), QR-preconditioned for tall inputs.

use alloc::format;
use alloc::vec::Vec;

use super::qr::HouseholderQr;
use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::C64;
#[allow(unused_imports)]
use num_traits::Float;

const MAX_SWEEPS: usize = 80;

/// `A = U diag(S) Vᴴ` with nonincreasing `S`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: ComplexMatrix,
    pub s: Vec<f64>,
    pub v: ComplexMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let k = self.s.len();
        let us = ComplexMatrix::from_fn(self.u.rows(), k, |i, j| self.u[(i, j)] * self.s[j]);
        let vk = self.v.block(0, self.v.rows(), 0, k);
        &us * &vk.adjoint()
    }

    /// Numerical rank with singular values above `rel_tol · σ_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.s.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return 0;
        }
        self.s.iter().take_while(|&&s| s > rel_tol * top).count()
    }
}

/// Full SVD: `U` is m×m, `V` is n×n, `S` has min(m, n) entries.
pub fn svd(a: &ComplexMatrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let thin = svd_thin(a)?;
    Ok(SvdResult {
        u: complete_orthonormal(&thin.u, m),
        s: thin.s,
        v: complete_orthonormal(&thin.v, n),
    })
}

/// Economy SVD: `U` is m×k, `V` is n×k with k = min(m, n).
pub fn svd_thin(a: &ComplexMatrix) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(Error::InvalidArgument("svd of a non-finite matrix".into()));
    }
    let (m, n) = a.shape();
    if m < n {
        let t = svd_thin(&a.adjoint())?;
        return Ok(SvdResult {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    if n == 0 {
        return Ok(SvdResult {
            u: ComplexMatrix::zeros(m, 0),
            s: Vec::new(),
            v: ComplexMatrix::zeros(0, 0),
        });
    }
    if m > n {
        let qr = HouseholderQr::new(a);
        let inner = jacobi(&qr.r())?;
        let q = qr.q_thin();
        return Ok(SvdResult {
            u: &q * &inner.u,
            s: inner.s,
            v: inner.v,
        });
    }
    jacobi(a)
}

/// Square or tall input; returns the thin factorization.
fn jacobi(a: &ComplexMatrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = ComplexMatrix::identity(n);
    let tol = f64::EPSILON * (m as f64).sqrt();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, C64::new(0.0, 0.0));
                {
                    let cp = w.column(p);
                    let cq = w.column(q);
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x.norm_sqr();
                        beta += y.norm_sqr();
                        gamma += x.conj() * y;
                    }
                }
                let g = gamma.norm();
                if g == 0.0 || g <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // Rotate [a_p, a_q·e^{-iφ}] by the real Jacobi rotation.
                let ph = (gamma / g).conj();
                rotate(&mut w, p, q, c, s, ph);
                rotate(&mut v, p, q, c, s, ph);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "Jacobi SVD of a {}x{} matrix (norm {:e})",
            m,
            n,
            a.norm_fro()
        )));
    }
    let norms: Vec<f64> = (0..n)
        .map(|j| w.column(j).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        norms[j]
            .partial_cmp(&norms[i])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let smax = norms[order[0]];
    let mut u = ComplexMatrix::zeros(m, n);
    let mut vs = ComplexMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        s.push(sigma);
        let ok = sigma > 0.0 && sigma > smax * f64::EPSILON * 1e-3;
        valid.push(ok);
        if ok {
            for i in 0..m {
                u[(i, dst)] = w[(i, src)] / sigma;
            }
        }
        vs.column_mut(dst).copy_from_slice(v.column(src));
    }
    if valid.iter().any(|ok| !ok) {
        fill_orthonormal(&mut u, &valid);
    }
    Ok(SvdResult { u, s, v: vs })
}

#[inline]
fn rotate(w: &mut ComplexMatrix, p: usize, q: usize, c: f64, s: f64, ph: C64) {
    let rows = w.rows();
    for i in 0..rows {
        let x = w[(i, p)];
        let y = w[(i, q)] * ph;
        w[(i, p)] = x * c - y * s;
        w[(i, q)] = x * s + y * c;
    }
}

/// Replaces the columns flagged invalid by unit vectors orthogonal to all others.
fn fill_orthonormal(u: &mut ComplexMatrix, valid: &[bool]) {
    let m = u.rows();
    let mut have: Vec<usize> = (0..valid.len()).filter(|&j| valid[j]).collect();
    for j in 0..valid.len() {
        if valid[j] {
            continue;
        }
        // Project every basis vector out of the current span and keep the largest remainder.
        let mut best: Option<(f64, Vec<C64>)> = None;
        for candidate in 0..m {
            let mut x = alloc::vec![C64::new(0.0, 0.0); m];
            x[candidate] = C64::new(1.0, 0.0);
            for _ in 0..2 {
                for &h in &have {
                    let col = u.column(h);
                    let dot: C64 = col.iter().zip(&x).map(|(a, b)| a.conj() * b).sum();
                    for (xi, ci) in x.iter_mut().zip(col) {
                        *xi -= dot * ci;
                    }
                }
            }
            let nrm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if best.as_ref().map_or(true, |(b, _)| nrm > *b) {
                best = Some((nrm, x));
            }
        }
        if let Some((nrm, x)) = best {
            if nrm > 0.0 {
                for (dst, xi) in u.column_mut(j).iter_mut().zip(&x) {
                    *dst = xi / nrm;
                }
                have.push(j);
            }
        }
    }
}

/// Extends the orthonormal columns of `q` (m×k) to an m×`size` orthonormal matrix.
pub fn complete_orthonormal(q: &ComplexMatrix, size: usize) -> ComplexMatrix {
    let (m, k) = q.shape();
    if k >= size {
        return q.clone();
    }
    let mut out = ComplexMatrix::zeros(m, size);
    out.set_block(0, 0, q);
    let mut valid = alloc::vec![true; k];
    valid.resize(size, false);
    fill_orthonormal(&mut out, &valid);
    out
}
