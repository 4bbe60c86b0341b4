//! Block identification from two eigenbases and recovery of the first core.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::numerics;
use crate::tensor::{reshape_from_angle, ComplexDenseTensor};

/// The fixed gauge `K̂ = blockdiag(K̂_1, …, K̂_r)` with `K̂_1 = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeFix {
    pub blocks: Vec<ComplexMatrix>,
}

impl GaugeFix {
    pub fn rank(&self) -> usize {
        self.blocks.len()
    }

    pub fn khat(&self) -> ComplexMatrix {
        ComplexMatrix::block_diag(&self.blocks)
    }
}

/// Rows `j, j+r, …` and columns `k, k+r, …` of an r²×r² matrix.
pub fn strided_block(f: &ComplexMatrix, r: usize, j: usize, k: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(r, r, |a, b| f[(a * r + j, b * r + k)])
}

/// `F = pinv(E) E′`, `K̂_ℓ = F^(0,0) (F^(ℓ,0))^{-1}`.
pub fn gauge_fix(
    e: &ComplexMatrix,
    e_p: &ComplexMatrix,
    r: usize,
    pinv_rel_tol: f64,
) -> Result<GaugeFix> {
    let rr = r * r;
    if e.cols() != rr || e_p.cols() != rr || e.rows() != e_p.rows() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "eigenbases {}x{} and {}x{} for r = {}",
            e.rows(),
            e.cols(),
            e_p.rows(),
            e_p.cols(),
            r
        )));
    }
    let f = &numerics::pinv(e, Some(rr), pinv_rel_tol)? * e_p;
    let fnorm = f.norm_fro();
    let f00 = strided_block(&f, r, 0, 0);
    let mut blocks = Vec::with_capacity(r);
    blocks.push(ComplexMatrix::identity(r));
    for l in 1..r {
        let fl0 = strided_block(&f, r, l, 0);
        if fl0.norm_fro() <= pinv_rel_tol * fnorm
            || numerics::inverse_condition(&fl0)? < pinv_rel_tol
        {
            return Err(Error::SingularBlock { block: l });
        }
        blocks.push(&f00 * &numerics::inverse(&fl0)?);
    }
    if f00.norm_fro() <= pinv_rel_tol * fnorm || numerics::inverse_condition(&f00)? < pinv_rel_tol {
        return Err(Error::SingularBlock { block: 0 });
    }
    Ok(GaugeFix { blocks })
}

/// `Q̂_1⟨1⟩ = E Π(K̂)^{-1} = E Π(K̂^{-1})`, reshaped to `(n_1, r, r)`.
pub fn recover_first_core(e: &ComplexMatrix, gf: &GaugeFix) -> Result<ComplexDenseTensor> {
    let r = gf.rank();
    let inv = gf
        .blocks
        .iter()
        .map(numerics::inverse)
        .collect::<Result<Vec<_>>>()?;
    let pk = ComplexMatrix::block_diag(&inv).pi_permute(r, r)?;
    let q = e.matmul(&pk)?;
    reshape_from_angle(&q, &[e.rows(), r, r], 0)
}
