//! Tensor-ring decompositions: `T(α) = tr(Q_1^(α_1) ⋯ Q_d^(α_d))`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::numerics;
use crate::source::EntrySource;
use crate::tensor::{check_index, checked_numel, ComplexDenseTensor};
use crate::C64;

/// Default bound on the number of entries [`tr_reconstruct`] will materialize.
pub const DEFAULT_MEMORY_BOUND: usize = 1 << 28;

/// Ordered cores `Q_k` of shape `(n_k, r, r)` sharing one bond dimension `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrDecomposition {
    rank: usize,
    cores: Vec<ComplexDenseTensor>,
}

impl TrDecomposition {
    pub fn new(cores: Vec<ComplexDenseTensor>) -> Result<Self> {
        if cores.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a tensor ring needs at least 2 cores, got {}",
                cores.len()
            )));
        }
        let rank = cores[0].dims().get(1).copied().unwrap_or(0);
        for (k, c) in cores.iter().enumerate() {
            let d = c.dims();
            if d.len() != 3 || d[1] != rank || d[2] != rank {
                return Err(Error::ShapeMismatch(format!(
                    "core {} has dims {:?}; expected (n, {}, {})",
                    k, d, rank, rank
                )));
            }
        }
        Ok(TrDecomposition { rank, cores })
    }

    /// Builds cores from their mode-1 slices: `slices[k][α]` is `Q_k^(α)`.
    pub fn from_slices(slices: &[Vec<ComplexMatrix>]) -> Result<Self> {
        let cores = slices
            .iter()
            .map(|s| ComplexDenseTensor::from_core_slices(s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dims()[0]).collect()
    }

    pub fn cores(&self) -> &[ComplexDenseTensor] {
        &self.cores
    }

    pub fn core(&self, k: usize) -> &ComplexDenseTensor {
        &self.cores[k]
    }

    pub fn into_cores(self) -> Vec<ComplexDenseTensor> {
        self.cores
    }

    pub fn slice(&self, k: usize, alpha: usize) -> ComplexMatrix {
        self.cores[k].core_slice(alpha)
    }

    pub fn slices(&self, k: usize) -> Vec<ComplexMatrix> {
        (0..self.cores[k].dims()[0])
            .map(|a| self.slice(k, a))
            .collect()
    }

    /// Cores of `⟵T^k`: core `m` of the result is core `(m + k) mod d` of `self`.
    pub fn rotate(&self, k: usize) -> Self {
        let d = self.order();
        TrDecomposition {
            rank: self.rank,
            cores: (0..d).map(|m| self.cores[(m + k) % d].clone()).collect(),
        }
    }

    /// Gauge transform: slices become `L_k^{-1} Q_k^(α) L_{k+1}` with `L_{d+1} = L_1`.
    pub fn gauge_transform(&self, ls: &[ComplexMatrix]) -> Result<Self> {
        let d = self.order();
        if ls.len() != d {
            return Err(Error::InvalidArgument(format!(
                "{} gauge matrices for {} cores",
                ls.len(),
                d
            )));
        }
        let invs = ls
            .iter()
            .map(numerics::inverse)
            .collect::<Result<Vec<_>>>()?;
        let slices: Vec<Vec<ComplexMatrix>> = (0..d)
            .map(|k| {
                self.slices(k)
                    .iter()
                    .map(|q| &(&invs[k] * q) * &ls[(k + 1) % d])
                    .collect()
            })
            .collect();
        Self::from_slices(&slices)
    }

    /// Multiplies every slice of core `k` by `s`.
    pub fn scale_core(&mut self, k: usize, s: C64) {
        for z in self.cores[k].as_mut_slice() {
            *z *= s;
        }
    }
}

/// `tr(Q_1^(α_1) ⋯ Q_d^(α_d))`.
pub fn tr_evaluate(dec: &TrDecomposition, index: &[usize]) -> Result<C64> {
    check_index(&dec.dims(), index)?;
    let mut p = dec.slice(0, index[0]);
    for k in 1..dec.order() {
        p = &p * &dec.slice(k, index[k]);
    }
    Ok(p.trace())
}

/// Lazily evaluated TR tensor; the slices are cached at construction.
#[derive(Debug, Clone)]
pub struct TrSource {
    dims: Vec<usize>,
    slices: Vec<Vec<ComplexMatrix>>,
}

impl TrSource {
    pub fn new(dec: &TrDecomposition) -> Self {
        TrSource {
            dims: dec.dims(),
            slices: (0..dec.order()).map(|k| dec.slices(k)).collect(),
        }
    }
}

impl EntrySource for TrSource {
    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn entry(&self, index: &[usize]) -> Result<C64> {
        check_index(&self.dims, index)?;
        let mut p = self.slices[0][index[0]].clone();
        for k in 1..self.dims.len() {
            p = &p * &self.slices[k][index[k]];
        }
        Ok(p.trace())
    }
}

/// Prefix products `Q_1^(α_1)⋯Q_{d−1}^(α_{d−1})` for every prefix, stored flat
/// (r·r values each, column-major) in column-major prefix order.
fn prefix_products(dec: &TrDecomposition) -> Vec<C64> {
    let d = dec.order();
    let r = dec.rank();
    let rr = r * r;
    let mut prefix: Vec<C64> = Vec::new();
    for s in dec.slices(0) {
        prefix.extend_from_slice(s.as_slice());
    }
    for k in 1..d - 1 {
        let slices = dec.slices(k);
        let count = prefix.len() / rr;
        let mut next = vec![C64::new(0.0, 0.0); count * slices.len() * rr];
        for (a, s) in slices.iter().enumerate() {
            let s = s.as_slice();
            for (i, p) in prefix.chunks(rr).enumerate() {
                let out = &mut next[(i + a * count) * rr..(i + a * count + 1) * rr];
                for col in 0..r {
                    for kk in 0..r {
                        let b = s[kk + col * r];
                        for row in 0..r {
                            out[row + col * r] += p[row + kk * r] * b;
                        }
                    }
                }
            }
        }
        prefix = next;
    }
    prefix
}

/// Visits every entry in column-major order as `(offset, value)`, sharing the
/// prefix products over the first d−1 modes.
pub fn for_each_entry(dec: &TrDecomposition, mut f: impl FnMut(usize, C64)) -> Result<()> {
    for_each_entry_multi(&[dec], |i, v| f(i, v[0]))
}

/// Like [`for_each_entry`] over several decompositions of equal dims at once.
pub fn for_each_entry_multi(
    decs: &[&TrDecomposition],
    mut f: impl FnMut(usize, &[C64]),
) -> Result<()> {
    let dims = decs[0].dims();
    if decs.iter().any(|d| d.dims() != dims) {
        return Err(Error::ShapeMismatch(
            "decompositions with different dims".into(),
        ));
    }
    let d = dims.len();
    checked_numel(&dims)?;
    let prefix_count = checked_numel(&dims[..d - 1])?;
    let prefixes: Vec<Vec<C64>> = decs.iter().map(|dec| prefix_products(dec)).collect();
    let lasts: Vec<Vec<ComplexMatrix>> = decs
        .iter()
        .map(|dec| dec.slices(d - 1).iter().map(|s| s.transpose()).collect())
        .collect();
    let mut vals = vec![C64::new(0.0, 0.0); decs.len()];
    for a in 0..dims[d - 1] {
        for i in 0..prefix_count {
            for (t, dec) in decs.iter().enumerate() {
                let rr = dec.rank() * dec.rank();
                let p = &prefixes[t][i * rr..(i + 1) * rr];
                // tr(P S) = Σ P(a,b) S(b,a)
                vals[t] = p
                    .iter()
                    .zip(lasts[t][a].as_slice())
                    .map(|(x, y)| x * y)
                    .sum();
            }
            f(i + a * prefix_count, &vals);
        }
    }
    Ok(())
}

/// Materializes the full tensor, refusing more than `limit` entries.
pub fn tr_reconstruct(dec: &TrDecomposition, limit: usize) -> Result<ComplexDenseTensor> {
    let dims = dec.dims();
    let n = checked_numel(&dims)?;
    if n > limit {
        return Err(Error::MemoryBound { entries: n, limit });
    }
    let mut data = vec![C64::new(0.0, 0.0); n];
    for_each_entry(dec, |i, v| data[i] = v)?;
    ComplexDenseTensor::from_data(&dims, data)
}

/// `(‖A − B‖_F, ‖B‖_F)` over every entry, streamed without materializing either tensor.
pub fn tr_distance(a: &TrDecomposition, b: &TrDecomposition) -> Result<(f64, f64)> {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for_each_entry_multi(&[a, b], |_, v| {
        diff += (v[0] - v[1]).norm_sqr();
        norm += v[1].norm_sqr();
    })?;
    Ok((diff.sqrt(), norm.sqrt()))
}

/// `(‖R(dec) − T‖_F, ‖T‖_F)` against a dense tensor.
pub fn tr_distance_dense(dec: &TrDecomposition, t: &ComplexDenseTensor) -> Result<(f64, f64)> {
    if dec.dims() != t.dims() {
        return Err(Error::ShapeMismatch(format!(
            "dims {:?} vs {:?}",
            dec.dims(),
            t.dims()
        )));
    }
    let data = t.as_slice();
    let mut diff = 0.0;
    for_each_entry(dec, |i, v| diff += (v - data[i]).norm_sqr())?;
    Ok((diff.sqrt(), t.norm_fro()))
}

/// Relative Frobenius error of `dec` against the dense tensor `t`.
pub fn relative_error(dec: &TrDecomposition, t: &ComplexDenseTensor) -> Result<f64> {
    let (d, n) = tr_distance_dense(dec, t)?;
    Ok(if n == 0.0 { d } else { d / n })
}
