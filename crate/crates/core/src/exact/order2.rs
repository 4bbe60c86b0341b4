//! Order-2 tensor rings from a truncated SVD.

use alloc::format;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::numerics;
use crate::tensor::{reshape_from_angle, reshape_from_bracket, ComplexDenseTensor};
use crate::tr::TrDecomposition;

/// Relative tail energy above which a matrix is reported as exceeding rank r².
pub const ORDER2_RANK_TOL: f64 = 1e-10;

/// `T = U Σ Vᴴ`: `Q̂_1⟨1⟩ = [U O]`, `Q̂_2[1] = conj([VΣ O])`, zero-padded to r² columns.
pub fn order2_decompose(t: &ComplexDenseTensor, r: usize) -> Result<TrDecomposition> {
    if t.order() != 2 {
        return Err(Error::InvalidArgument(format!(
            "order-2 decomposition of an order-{} tensor",
            t.order()
        )));
    }
    if r == 0 {
        return Err(Error::InvalidArgument("TR-rank must be positive".into()));
    }
    let (n1, n2) = (t.dims()[0], t.dims()[1]);
    let rr = r * r;
    let m = ComplexMatrix::from_col_major(n1, n2, t.as_slice().to_vec())?;
    let norm = m.norm_fro();
    let mut q1 = ComplexMatrix::zeros(n1, rr);
    let mut q2 = ComplexMatrix::zeros(n2, rr);
    if norm > 0.0 {
        let s = numerics::svd_thin(&m)?;
        let tail: f64 = s.s.iter().skip(rr).map(|x| x * x).sum::<f64>().sqrt() / norm;
        if tail > ORDER2_RANK_TOL {
            return Err(Error::RankExceeded {
                bound: rr,
                residual: tail,
            });
        }
        let p = s.s.len().min(rr);
        for j in 0..p {
            for i in 0..n1 {
                q1[(i, j)] = s.u[(i, j)];
            }
            for i in 0..n2 {
                q2[(i, j)] = (s.v[(i, j)] * s.s[j]).conj();
            }
        }
    }
    TrDecomposition::new(alloc::vec![
        reshape_from_angle(&q1, &[n1, r, r], 0)?,
        reshape_from_bracket(&q2, &[n2, r, r], 0)?,
    ])
}
