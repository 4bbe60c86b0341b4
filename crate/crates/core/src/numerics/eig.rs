//! Non-Hermitian eigendecomposition: Hessenberg reduction, shifted complex QR
//! to Schur form, then triangular back-substitution for the eigenvectors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::C64;
#[allow(unused_imports)]
use num_traits::Float;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Eigenpairs `A v_j = λ_j v_j`; each column of `vectors` has unit 2-norm
/// with its first non-negligible entry rotated onto the positive real axis.
#[derive(Debug, Clone)]
pub struct EigResult {
    pub values: Vec<C64>,
    pub vectors: ComplexMatrix,
}

/// Complex Schur form `A = Z T Zᴴ`.
pub struct Schur {
    pub t: ComplexMatrix,
    pub z: ComplexMatrix,
}

pub fn eig(a: &ComplexMatrix) -> Result<EigResult> {
    let n = a.rows();
    let Schur { t, z } = schur(a)?;
    let values: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    let tnorm = t.max_abs().max(f64::MIN_POSITIVE);
    let smin = f64::EPSILON * tnorm;
    let mut vectors = ComplexMatrix::zeros(n, n);
    let mut x = vec![ZERO; n];
    for k in 0..n {
        let lambda = t[(k, k)];
        for xi in x.iter_mut() {
            *xi = ZERO;
        }
        x[k] = C64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut s = ZERO;
            for j in i + 1..=k {
                s += t[(i, j)] * x[j];
            }
            let mut d = t[(i, i)] - lambda;
            if d.norm() < smin {
                d = C64::new(smin, 0.0);
            }
            x[i] = -s / d;
            let big = x[..=k].iter().map(|z| z.norm()).fold(0.0, f64::max);
            if big > 1e100 {
                for xj in x[..=k].iter_mut() {
                    *xj /= big;
                }
            }
        }
        let col = vectors.column_mut(k);
        for (i, c) in col.iter_mut().enumerate() {
            let mut s = ZERO;
            for j in 0..=k {
                s += z[(i, j)] * x[j];
            }
            *c = s;
        }
        normalize_vector(col);
    }
    Ok(EigResult { values, vectors })
}

/// Unit 2-norm, first entry above `1e-8 · max` made real positive.
pub fn normalize_vector(v: &mut [C64]) {
    let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if nrm == 0.0 {
        return;
    }
    let big = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let lead = v
        .iter()
        .find(|z| z.norm() > 1e-8 * big)
        .copied()
        .unwrap_or(ZERO);
    let phase = if lead.norm() > 0.0 {
        lead.conj() / lead.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    for z in v.iter_mut() {
        *z = *z * phase / nrm;
    }
}

pub fn schur(a: &ComplexMatrix) -> Result<Schur> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "eig of a {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::InvalidArgument("eig of a non-finite matrix".into()));
    }
    let n = a.rows();
    let (mut h, mut z) = hessenberg(a);
    let norm = h.max_abs();
    if n <= 1 || norm == 0.0 {
        return Ok(Schur { t: h, z });
    }
    let eps = f64::EPSILON;
    let mut hi = n - 1;
    let mut iter = 0usize;
    let max_iter = 60 * n.max(4);
    let mut since_deflation = 0usize;
    let mut rot = Vec::with_capacity(n);
    while hi > 0 {
        // Find the active unreduced block [lo, hi].
        let mut lo = hi;
        while lo > 0 {
            let sub = h[(lo, lo - 1)].norm();
            let mut diag = h[(lo, lo)].norm() + h[(lo - 1, lo - 1)].norm();
            if diag == 0.0 {
                diag = norm;
            }
            if sub <= eps * diag || sub <= f64::MIN_POSITIVE * 1e10 {
                h[(lo, lo - 1)] = ZERO;
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            hi -= 1;
            since_deflation = 0;
            continue;
        }
        iter += 1;
        since_deflation += 1;
        if iter > max_iter {
            return Err(Error::NoConvergence(format!(
                "complex QR on a {}x{} matrix (norm {:e})",
                n, n, norm
            )));
        }
        let mu = if since_deflation % 11 == 10 {
            // Exceptional shift to break cycles.
            h[(hi, hi)] + C64::new(0.75 * h[(hi, hi - 1)].norm(), 0.0)
        } else {
            wilkinson_shift(
                h[(hi - 1, hi - 1)],
                h[(hi - 1, hi)],
                h[(hi, hi - 1)],
                h[(hi, hi)],
            )
        };
        qr_step(&mut h, &mut z, lo, hi, mu, &mut rot);
    }
    // Clean the strictly lower part.
    for j in 0..n {
        for i in j + 1..n {
            h[(i, j)] = ZERO;
        }
    }
    Ok(Schur { t: h, z })
}

fn wilkinson_shift(a: C64, b: C64, c: C64, d: C64) -> C64 {
    let tr = (a + d) * 0.5;
    let disc = (((a - d) * 0.5) * ((a - d) * 0.5) + b * c).sqrt();
    let l1 = tr + disc;
    let l2 = tr - disc;
    if (l1 - d).norm() <= (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Givens `G = [[c, s], [−s̄, c]]` with `G [a; b] = [ρ; 0]`.
fn givens(a: C64, b: C64) -> (f64, C64) {
    let bn = b.norm();
    if bn == 0.0 {
        return (1.0, ZERO);
    }
    let an = a.norm();
    if an == 0.0 {
        return (0.0, b.conj() / bn);
    }
    let r = an.hypot(bn);
    let c = an / r;
    let s = (a / an) * b.conj() / r;
    (c, s)
}

/// One explicitly shifted QR sweep on the Hessenberg block `[lo, hi]`,
/// updating the full matrix so that `H` converges to the Schur factor.
fn qr_step(
    h: &mut ComplexMatrix,
    z: &mut ComplexMatrix,
    lo: usize,
    hi: usize,
    mu: C64,
    rot: &mut Vec<(f64, C64)>,
) {
    let n = h.rows();
    for i in lo..=hi {
        h[(i, i)] -= mu;
    }
    rot.clear();
    for k in lo..hi {
        let (c, s) = givens(h[(k, k)], h[(k + 1, k)]);
        rot.push((c, s));
        for j in k..n {
            let x = h[(k, j)];
            let y = h[(k + 1, j)];
            h[(k, j)] = x * c + s * y;
            h[(k + 1, j)] = -s.conj() * x + y * c;
        }
    }
    for (off, &(c, s)) in rot.iter().enumerate() {
        let k = lo + off;
        let top = (k + 2).min(hi);
        for i in 0..=top {
            let x = h[(i, k)];
            let y = h[(i, k + 1)];
            h[(i, k)] = x * c + y * s.conj();
            h[(i, k + 1)] = -x * s + y * c;
        }
        for i in 0..n {
            let x = z[(i, k)];
            let y = z[(i, k + 1)];
            z[(i, k)] = x * c + y * s.conj();
            z[(i, k + 1)] = -x * s + y * c;
        }
    }
    for i in lo..=hi {
        h[(i, i)] += mu;
    }
}

/// Householder reduction `A = Z H Zᴴ` with `H` upper Hessenberg.
fn hessenberg(a: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let n = a.rows();
    let mut h = a.clone();
    let mut z = ComplexMatrix::identity(n);
    if n < 3 {
        return (h, z);
    }
    let mut v = vec![ZERO; n];
    for k in 0..n - 2 {
        let xnorm = (k + 1..n).map(|i| h[(i, k)].norm_sqr()).sum::<f64>().sqrt();
        if xnorm == 0.0 {
            continue;
        }
        let x0 = h[(k + 1, k)];
        let phase = if x0.norm() == 0.0 {
            C64::new(1.0, 0.0)
        } else {
            x0 / x0.norm()
        };
        // u = x + phase·‖x‖·e1, reflector I − 2uuᴴ/‖u‖².
        for i in 0..n {
            v[i] = ZERO;
        }
        for i in k + 1..n {
            v[i] = h[(i, k)];
        }
        v[k + 1] += phase * xnorm;
        let unorm2: f64 = v[k + 1..].iter().map(|z| z.norm_sqr()).sum();
        if unorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / unorm2;
        // H ← P H
        for j in 0..n {
            let mut s = ZERO;
            for i in k + 1..n {
                s += v[i].conj() * h[(i, j)];
            }
            s *= beta;
            for i in k + 1..n {
                h[(i, j)] -= v[i] * s;
            }
        }
        // H ← H P, Z ← Z P
        for m in [&mut h, &mut z] {
            for i in 0..n {
                let mut s = ZERO;
                for j in k + 1..n {
                    s += m[(i, j)] * v[j];
                }
                s *= beta;
                for j in k + 1..n {
                    m[(i, j)] -= s * v[j].conj();
                }
            }
        }
        for i in k + 2..n {
            h[(i, k)] = ZERO;
        }
    }
    (h, z)
}
