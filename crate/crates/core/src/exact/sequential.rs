//! Sequential recovery of cores 2..d from shifted fiber families.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::numerics::{self, HouseholderQr};
use crate::source::EntrySource;
use crate::tensor::{reshape_from_angle, ComplexDenseTensor};
use crate::tr::TrDecomposition;

use super::probes::{sequential_family, ProbeConfig};

/// Where step m reads its fiber family from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilySource {
    /// `⟵T^{m−1}(:, γ_mid, Γ_{m−1})`, read from T at the matching indices.
    Shifted,
    /// Cyclically symmetric T with constant γ: every shifted family equals the
    /// family freeing mode 1 and running mode d, so only that one is read.
    CyclicSymmetric,
}

/// Recovers `Q̂_2, …, Q̂_d` given `Q̂_1`, returning the full decomposition.
pub fn recover_remaining_cores<S: EntrySource + ?Sized>(
    t: &S,
    q1: ComplexDenseTensor,
    r: usize,
    probes: &ProbeConfig,
    pinv_rel_tol: f64,
    source: FamilySource,
    balance: bool,
) -> Result<TrDecomposition> {
    let dims = t.dims().to_vec();
    let d = dims.len();
    let rr = r * r;
    let mut cores: Vec<ComplexDenseTensor> = Vec::with_capacity(d);
    if balance {
        cores.push(orthonormalize_left(&orthonormalize_right(&q1)?)?);
    } else {
        cores.push(q1);
    }
    for m in 1..d {
        let k = m - 1;
        let fixed = match source {
            FamilySource::Shifted => k,
            FamilySource::CyclicSymmetric => d - 1,
        };
        let family = sequential_family(&dims, r, probes, fixed);
        let c_rows = cores[k]
            .matricize_bracket(0)?
            .select_rows(&probes.gamma_modes[fixed]);
        let ct = c_rows.transpose();
        let mut a_parts = Vec::with_capacity(family.len());
        let mut b_parts = Vec::with_capacity(family.len());
        for (v, variant) in family.iter().enumerate() {
            let mut a = ComplexMatrix::zeros(dims[m], variant.len());
            for (c, col) in variant.iter().enumerate() {
                for (l, idx) in col.iter().enumerate() {
                    a[(l, c)] = t.entry(idx)?;
                }
            }
            let mut p = ComplexMatrix::identity(r);
            for (j, core) in cores.iter().enumerate().take(m - 1) {
                let g = if j == 0 {
                    (probes.gamma[0] + v) % dims[0]
                } else {
                    probes.gamma[j]
                };
                p = &p * &core.core_slice(g);
            }
            b_parts.push(&ComplexMatrix::identity(r).kron(&p) * &ct);
            a_parts.push(a);
        }
        let a = ComplexMatrix::hcat(&a_parts.iter().collect::<Vec<_>>())?;
        let b = ComplexMatrix::hcat(&b_parts.iter().collect::<Vec<_>>())?;
        let ratio = if b.cols() < rr {
            0.0
        } else {
            numerics::inverse_condition(&b)?
        };
        if ratio < pinv_rel_tol {
            return Err(Error::RankDeficient {
                context: format!("sequential step for mode {}", m),
                ratio,
            });
        }
        let q = &a * &numerics::pinv(&b, Some(rr), pinv_rel_tol)?;
        let mut core = reshape_from_angle(&q, &[dims[m], r, r], 0)?;
        if balance && m + 1 < d {
            core = orthonormalize_right(&core)?;
        }
        cores.push(core);
    }
    TrDecomposition::new(cores)
}

/// Re-gauges the right bond so the (n·r) × r unfolding `Q(α,a; b)` has
/// orthonormal columns. The next step then recovers its core in that gauge.
pub fn orthonormalize_right(core: &ComplexDenseTensor) -> Result<ComplexDenseTensor> {
    let (n, r) = (core.dims()[0], core.dims()[1]);
    let x = ComplexMatrix::from_col_major(n * r, r, core.as_slice().to_vec())?;
    let qr = HouseholderQr::new(&x);
    if qr.rank(1e-13) < r {
        return Ok(core.clone());
    }
    ComplexDenseTensor::from_data(core.dims(), qr.q_thin().into_vec())
}

/// Re-gauges the left bond so the (n·r) × r unfolding `Q(α,b; a)` has orthonormal columns.
pub fn orthonormalize_left(core: &ComplexDenseTensor) -> Result<ComplexDenseTensor> {
    let (n, r) = (core.dims()[0], core.dims()[1]);
    let x = ComplexMatrix::from_fn(n * r, r, |row, a| {
        let (alpha, b) = (row % n, row / n);
        core.at(&[alpha, a, b])
    });
    let qr = HouseholderQr::new(&x);
    if qr.rank(1e-13) < r {
        return Ok(core.clone());
    }
    let q = qr.q_thin();
    ComplexDenseTensor::from_fn(core.dims(), |i| q[(i[0] + n * i[2], i[1])])
}
