//! Dense complex linear algebra used by every decomposition route.
//!
//! Everything here is written against [`ComplexMatrix`] and runs without `std`.

mod eig;
mod lu;
mod qr;
mod svd;

pub use eig::{eig, normalize_vector, schur, EigResult, Schur};
pub use lu::{det, inverse, solve, Lu};
pub use qr::HouseholderQr;
pub use svd::{complete_orthonormal, svd, svd_thin, SvdResult};

use alloc::format;

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::C64;
#[allow(unused_imports)]
use num_traits::Float;

/// Numerical tolerances shared by the decomposition routes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToleranceConfig {
    /// Singular values below `pinv_rel_tol · σ_max` are discarded by [`pinv`].
    pub pinv_rel_tol: f64,
    /// Accepted eigen-residual `‖Av − λv‖ / ‖A‖`.
    pub eig_residual_tol: f64,
    /// Minimum separation between eigenvalue clusters, relative to the spectral radius.
    pub spectral_gap_min: f64,
    /// Spread allowed inside one eigenvalue cluster, relative to the spectral radius.
    pub cluster_rel_tol: f64,
}

impl ToleranceConfig {
    pub const fn exact() -> Self {
        ToleranceConfig {
            pinv_rel_tol: 1e-10,
            eig_residual_tol: 1e-8,
            spectral_gap_min: 1e-4,
            cluster_rel_tol: 1e-6,
        }
    }

    pub const fn robust() -> Self {
        ToleranceConfig {
            pinv_rel_tol: 1e-8,
            ..Self::exact()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.pinv_rel_tol,
            self.eig_residual_tol,
            self.spectral_gap_min,
            self.cluster_rel_tol,
        ];
        if all.iter().all(|t| t.is_finite() && *t > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "tolerances must be positive and finite: {:?}",
                self
            )))
        }
    }
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self::exact()
    }
}

/// SVD pseudoinverse keeping singular values `≥ rel_tol · σ_max`, optionally
/// truncated to the leading `rank_limit`. The zero matrix maps to zero.
pub fn pinv(a: &ComplexMatrix, rank_limit: Option<usize>, rel_tol: f64) -> Result<ComplexMatrix> {
    let (m, n) = a.shape();
    let s = svd_thin(a)?;
    let mut keep = s.rank(rel_tol);
    if let Some(limit) = rank_limit {
        keep = keep.min(limit);
    }
    let mut out = ComplexMatrix::zeros(n, m);
    for t in 0..keep {
        let inv = 1.0 / s.s[t];
        for j in 0..m {
            let uj = s.u[(j, t)].conj() * inv;
            for i in 0..n {
                out[(i, j)] += s.v[(i, t)] * uj;
            }
        }
    }
    Ok(out)
}

/// `σ_min / σ_max` of `a` (zero for an empty or zero matrix).
pub fn inverse_condition(a: &ComplexMatrix) -> Result<f64> {
    let s = svd_thin(a)?;
    match (s.s.first(), s.s.last()) {
        (Some(&top), Some(&bottom)) if top > 0.0 => Ok(bottom / top),
        _ => Ok(0.0),
    }
}

/// Least squares `min ‖A x − b‖` by column-pivoted QR, falling back to the
/// pseudoinverse (minimum-norm solution) when `A` is numerically rank deficient.
pub fn lstsq(a: &ComplexMatrix, b: &ComplexMatrix, rel_tol: f64) -> Result<ComplexMatrix> {
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch(format!(
            "lstsq with {} and {} rows",
            a.rows(),
            b.rows()
        )));
    }
    let qr = HouseholderQr::with_pivoting(a);
    let rank = qr.rank(rel_tol);
    if rank == a.cols() {
        Ok(qr.solve_basic(b, rank))
    } else {
        Ok(&pinv(a, None, rel_tol)? * b)
    }
}

/// Integer power of a square matrix by repeated squaring (negative powers invert).
pub fn matrix_power(a: &ComplexMatrix, p: i64) -> Result<ComplexMatrix> {
    let base = if p < 0 { inverse(a)? } else { a.clone() };
    let mut e = p.unsigned_abs();
    let mut acc = ComplexMatrix::identity(a.rows());
    let mut sq = base;
    while e > 0 {
        if e & 1 == 1 {
            acc = &acc * &sq;
        }
        e >>= 1;
        if e > 0 {
            sq = &sq * &sq;
        }
    }
    Ok(acc)
}

/// `x^(1/d)` on the principal branch shifted by `k` turns of `2π/d`.
pub fn root_branch(x: C64, d: usize, k: usize) -> C64 {
    let (l, theta) = x.to_polar();
    let df = d as f64;
    C64::from_polar(
        l.powf(1.0 / df),
        (theta + 2.0 * core::f64::consts::PI * k as f64) / df,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn identity_svd_has_unit_values() {
        let s = svd(&ComplexMatrix::identity(4)).unwrap();
        assert!(s.s.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn rank_one_outer_product() {
        let u = [c(0.6, 0.0), c(0.0, 0.8)];
        let v = [c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0)];
        let a = ComplexMatrix::from_fn(2, 3, |i, j| u[i] * v[j].conj());
        let s = svd(&a).unwrap();
        assert!((s.s[0] - 1.0).abs() < 1e-14);
        assert!(s.s[1].abs() < 1e-14);
        assert_eq!(s.u.shape(), (2, 2));
        assert_eq!(s.v.shape(), (3, 3));
        let uu = &s.u.adjoint() * &s.u;
        let vv = &s.v.adjoint() * &s.v;
        assert!(uu.rel_diff(&ComplexMatrix::identity(2)) < 1e-12);
        assert!(vv.rel_diff(&ComplexMatrix::identity(3)) < 1e-12);
    }

    #[test]
    fn eig_of_diagonal_and_rotation() {
        let d = ComplexMatrix::diag(&[c(3.0, 0.0), c(-1.0, 2.0), c(0.5, 0.0)]);
        let mut vals = eig(&d).unwrap().values;
        vals.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        assert_eq!(vals, [c(-1.0, 2.0), c(0.5, 0.0), c(3.0, 0.0)]);

        let rot =
            ComplexMatrix::from_rows(&[&[c(0.0, 0.0), c(-1.0, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)]]);
        let e = eig(&rot).unwrap();
        let mut ims: alloc::vec::Vec<f64> = e.values.iter().map(|z| z.im).collect();
        ims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ims[0] + 1.0).abs() < 1e-14 && (ims[1] - 1.0).abs() < 1e-14);
        assert!(e.values.iter().all(|z| z.re.abs() < 1e-14));
    }

    #[test]
    fn pinv_of_zero_is_zero() {
        let p = pinv(&ComplexMatrix::zeros(3, 2), None, 1e-10).unwrap();
        assert_eq!(p, ComplexMatrix::zeros(2, 3));
    }

    #[test]
    fn tolerance_defaults() {
        assert_eq!(ToleranceConfig::exact().pinv_rel_tol, 1e-10);
        assert_eq!(ToleranceConfig::robust().pinv_rel_tol, 1e-8);
        assert!(ToleranceConfig::exact().validate().is_ok());
        let bad = ToleranceConfig {
            spectral_gap_min: 0.0,
            ..ToleranceConfig::exact()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn powers_and_roots() {
        let a =
            ComplexMatrix::from_rows(&[&[c(2.0, 0.0), c(1.0, 0.0)], &[c(0.0, 0.0), c(3.0, 0.0)]]);
        let a3 = matrix_power(&a, 3).unwrap();
        assert_eq!(a3, &(&a * &a) * &a);
        let ainv = matrix_power(&a, -1).unwrap();
        assert!((&ainv * &a).rel_diff(&ComplexMatrix::identity(2)) < 1e-15);
        let z = c(-8.0, 0.0);
        for k in 0..3 {
            let w = root_branch(z, 3, k);
            assert!((w * w * w - z).norm() < 1e-12);
        }
    }
}
