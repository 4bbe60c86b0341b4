//! Decomposition when only a cyclic run of modes has `n_k ≥ r²`: the short
//! modes are merged into one super-mode, the merged tensor is decomposed, and
//! the super-core is split back into individual cores.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::SampleMask;
use crate::matrix::ComplexMatrix;
use crate::numerics;
use crate::source::{ContractedView, EntrySource, ShiftedView};
use crate::tensor::{unravel_index, ComplexDenseTensor};
use crate::tr::TrDecomposition;

use super::probes::{build_sample_mask, ProbeConfig};
use super::{decompose_with_retries, BlostrReport, ExactConfig, PipelineOptions};

/// `valid = {k : n_k ≥ r²}`; the longest cyclic run of valid modes starts at
/// `start` and has length `run`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContractionPlan {
    pub valid: Vec<usize>,
    pub start: usize,
    pub run: usize,
}

pub fn contraction_plan(dims: &[usize], r: usize) -> Result<ContractionPlan> {
    let d = dims.len();
    let ok = |k: usize| dims[k % d] >= r * r;
    let valid: Vec<usize> = (0..d).filter(|&k| ok(k)).collect();
    let run_from = |k: usize| (0..d).take_while(|&j| ok(k + j)).count();
    let mut best = (0, 0);
    for &k in &valid {
        let l = run_from(k);
        if l > best.1 {
            best = (k, l);
        }
    }
    if best.1 < 2 {
        return Err(Error::NoValidStart);
    }
    Ok(ContractionPlan {
        valid,
        start: best.0,
        run: best.1,
    })
}

/// Index bookkeeping between the original tensor and the contracted one.
///
/// The original modes are rotated by `shift` so the run occupies positions
/// `d−1, 0, …, run−2`; positions `run−1 .. d−2` are merged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefinedLayout {
    pub dims: Vec<usize>,
    pub shift: usize,
    pub run: usize,
    /// Sizes of the merged modes, in rotated order.
    pub group: Vec<usize>,
    pub contracted_dims: Vec<usize>,
}

impl RefinedLayout {
    pub fn new(dims: &[usize], plan: &ContractionPlan) -> Self {
        let d = dims.len();
        let shift = (plan.start + 1) % d;
        let rotated: Vec<usize> = (0..d).map(|p| dims[(p + shift) % d]).collect();
        let run = plan.run.min(d);
        let (group, contracted_dims) = if run >= d {
            (Vec::new(), rotated)
        } else {
            let group = rotated[run - 1..d - 1].to_vec();
            let mut c = rotated[..run - 1].to_vec();
            c.push(group.iter().product());
            c.push(rotated[d - 1]);
            (group, c)
        };
        RefinedLayout {
            dims: dims.to_vec(),
            shift,
            run,
            group,
            contracted_dims,
        }
    }

    /// Original index of an entry of the contracted tensor.
    pub fn original_index(&self, idx: &[usize]) -> Vec<usize> {
        let d = self.dims.len();
        let mut rotated = Vec::with_capacity(d);
        if self.group.is_empty() {
            rotated.extend_from_slice(idx);
        } else {
            let p = self.run - 1;
            rotated.extend_from_slice(&idx[..p]);
            let mut digits = vec![0; self.group.len()];
            unravel_index(&self.group, idx[p], &mut digits);
            rotated.extend_from_slice(&digits);
            rotated.push(idx[p + 1]);
        }
        let mut out = vec![0; d];
        for (p, &v) in rotated.iter().enumerate() {
            out[(p + self.shift) % d] = v;
        }
        out
    }
}

/// Δ for the refined route: the contracted tensor's Δ mapped to original indices.
pub fn refined_sample_mask(dims: &[usize], r: usize, probes: &ProbeConfig) -> Result<SampleMask> {
    let layout = RefinedLayout::new(dims, &contraction_plan(dims, r)?);
    let inner = build_sample_mask(&layout.contracted_dims, r, probes)?;
    let mut mask = SampleMask::new(dims)?;
    for idx in inner.indices() {
        let tag = inner.provenance(&idx).unwrap_or(0);
        mask.insert(&layout.original_index(&idx), tag)?;
    }
    Ok(mask)
}

/// Splits the super-core into the cores of the merged modes:
/// `Q̂_i^(a) = Q̂_con^(c(i,a)) (Q̂_con^(0))^{-1}` for all but the last merged mode,
/// which keeps `Q̂_con^(c(L−1,a))`; `c(i,a)` sets merged digit i to a, others to 0.
fn expand_super_core(
    con: &ComplexDenseTensor,
    group: &[usize],
    tol: f64,
) -> Result<Vec<ComplexDenseTensor>> {
    let l = group.len();
    let base = con.core_slice(0);
    let ratio = numerics::inverse_condition(&base)?;
    if l > 1 && ratio < tol {
        return Err(Error::RankDeficient {
            context: "super-core slice at the zero index".into(),
            ratio,
        });
    }
    let base_inv = if l > 1 {
        numerics::inverse(&base)?
    } else {
        base
    };
    let mut stride = 1;
    let mut out = Vec::with_capacity(l);
    for (i, &n) in group.iter().enumerate() {
        let slices: Vec<ComplexMatrix> = (0..n)
            .map(|a| {
                let s = con.core_slice(a * stride);
                if i + 1 < l {
                    &s * &base_inv
                } else {
                    s
                }
            })
            .collect();
        out.push(ComplexDenseTensor::from_core_slices(&slices)?);
        stride *= n;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedReport {
    pub plan: ContractionPlan,
    pub contracted_dims: Vec<usize>,
    pub inner: BlostrReport,
}

pub fn refined_decompose<S: EntrySource + ?Sized>(
    t: &S,
    r: usize,
    cfg: &ExactConfig,
) -> Result<TrDecomposition> {
    refined_decompose_with_report(t, r, None, cfg).map(|(d, _)| d)
}

/// `probes`, if given, refers to the contracted tensor.
pub fn refined_decompose_with_report<S: EntrySource + ?Sized>(
    t: &S,
    r: usize,
    probes: Option<&ProbeConfig>,
    cfg: &ExactConfig,
) -> Result<(TrDecomposition, RefinedReport)> {
    let dims = t.dims().to_vec();
    let d = dims.len();
    if d < 3 || r < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "refined route needs order >= 3 and r >= 2, got order {} and r = {}",
            d,
            r
        )));
    }
    let plan = contraction_plan(&dims, r)?;
    let layout = RefinedLayout::new(&dims, &plan);
    let shifted = ShiftedView::new(t, layout.shift)?;
    let opts = PipelineOptions::exact();
    let (inner, report) = if layout.group.is_empty() {
        decompose_with_retries(&shifted, r, probes, cfg, &opts)?
    } else {
        let view = ContractedView::new(&shifted, layout.run - 1, layout.group.len())?;
        decompose_with_retries(&view, r, probes, cfg, &opts)?
    };
    let mut rotated: Vec<ComplexDenseTensor> = Vec::with_capacity(d);
    let inner_cores = inner.into_cores();
    if layout.group.is_empty() {
        rotated = inner_cores;
    } else {
        let p = layout.run - 1;
        rotated.extend_from_slice(&inner_cores[..p]);
        rotated.extend(expand_super_core(
            &inner_cores[p],
            &layout.group,
            cfg.tol.pinv_rel_tol,
        )?);
        rotated.push(inner_cores[p + 1].clone());
    }
    let cores = (0..d)
        .map(|j| rotated[(j + d - layout.shift) % d].clone())
        .collect();
    Ok((
        TrDecomposition::new(cores)?,
        RefinedReport {
            plan,
            contracted_dims: layout.contracted_dims,
            inner: report,
        },
    ))
}
