//! Symmetric TR decomposition: one shared core from a generic decomposition by
//! a search over d-th root branches.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exact::{
    decompose_with_retries, BlostrReport, ExactConfig, FamilySource, PipelineOptions, ProbeConfig,
};
use crate::matrix::ComplexMatrix;
use crate::numerics;
use crate::source::EntrySource;
use crate::tensor::ComplexDenseTensor;
use crate::tr::TrDecomposition;
use crate::C64;

/// Accepted relative residual of a root candidate in exact mode.
pub const DEFAULT_ACCEPT_TOL: f64 = 1e-7;
/// Sampled tuples when the full index set is too large.
pub const DEFAULT_INDEX_BUDGET: usize = 4096;
/// Largest `n^d` checked exhaustively.
pub const FULL_CHECK_LIMIT: usize = 1_000_000;

/// Which product is eigendecomposed at the anchor index `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum RootProduct {
    /// `Q̂_1^(m) Q̂_d^(m)` after re-gauging every middle slice at `m` to the identity.
    EndCores,
    /// `Q̂_1^(m) Q̂_2^(m) ⋯ Q̂_d^(m)` on the cores as recovered.
    FullChain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SymmetricConfig {
    pub exact: ExactConfig,
    pub product: RootProduct,
    pub accept_tol: f64,
    pub index_budget: usize,
    pub full_check_limit: usize,
    pub verify_seed: u64,
}

impl Default for SymmetricConfig {
    fn default() -> Self {
        SymmetricConfig {
            exact: ExactConfig::default(),
            product: RootProduct::EndCores,
            accept_tol: DEFAULT_ACCEPT_TOL,
            index_budget: DEFAULT_INDEX_BUDGET,
            full_check_limit: FULL_CHECK_LIMIT,
            verify_seed: 0,
        }
    }
}

/// One element of the restricted solution set.
#[derive(Debug, Clone, PartialEq)]
pub struct RootCandidate {
    pub y1: ComplexMatrix,
    pub moduli: Vec<f64>,
    /// Phases in `[0, 2π)`.
    pub phases: Vec<f64>,
    /// Branch of roots 2..r; the first root is pinned to branch 0.
    pub k_choices: Vec<usize>,
    /// Diagonal of Ω.
    pub omega: Vec<C64>,
}

impl RootCandidate {
    fn new(y1: &ComplexMatrix, lambda: &[C64], d: usize, k_choices: Vec<usize>) -> Self {
        let moduli: Vec<f64> = lambda.iter().map(|l| l.norm()).collect();
        let phases: Vec<f64> = lambda.iter().map(|l| wrap_phase(l.arg())).collect();
        let omega = (0..lambda.len())
            .map(|t| {
                let k = if t == 0 { 0 } else { k_choices[t - 1] };
                numerics::root_branch(C64::from_polar(moduli[t], phases[t]), d, k)
            })
            .collect();
        RootCandidate {
            y1: y1.clone(),
            moduli,
            phases,
            k_choices,
            omega,
        }
    }

    /// Every ω multiplied by `e^{2πi/d}`.
    pub fn rotated(&self, d: usize) -> Self {
        let w = C64::from_polar(1.0, 2.0 * core::f64::consts::PI / d as f64);
        RootCandidate {
            omega: self.omega.iter().map(|o| o * w).collect(),
            ..self.clone()
        }
    }

    /// `Y_1 Ω Y_1^{-1}`.
    pub fn anchor_slice(&self) -> Result<ComplexMatrix> {
        let yi = numerics::inverse(&self.y1)?;
        Ok(&(&self.y1 * &ComplexMatrix::diag(&self.omega)) * &yi)
    }
}

fn wrap_phase(theta: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let t = theta % two_pi;
    if t < 0.0 {
        t + two_pi
    } else {
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricCore {
    pub core: ComplexDenseTensor,
    pub candidate: RootCandidate,
    pub residual: f64,
}

impl SymmetricCore {
    /// The ring of `d` copies of the core.
    pub fn to_tr(&self, d: usize) -> Result<TrDecomposition> {
        TrDecomposition::new(vec![self.core.clone(); d])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricReport {
    pub blostr: BlostrReport,
    pub anchor: usize,
    /// Residual of each candidate examined, in enumeration order.
    pub residuals: Vec<f64>,
}

/// Re-gauges so that `Q̂_k^(m) = I` for every middle core.
pub fn normalize_middle_slices(hats: &TrDecomposition, m: usize) -> Result<TrDecomposition> {
    let d = hats.order();
    let r = hats.rank();
    let mut ls = vec![ComplexMatrix::identity(r); d];
    let mut acc = ComplexMatrix::identity(r);
    for k in 1..d - 1 {
        acc = &acc * &hats.slice(k, m);
        let ratio = numerics::inverse_condition(&acc)?;
        if ratio < 1e-14 {
            return Err(Error::RankDeficient {
                context: format!("anchor slice product through mode {}", k),
                ratio,
            });
        }
        ls[k + 1] = numerics::inverse(&acc)?;
    }
    hats.gauge_transform(&ls)
}

/// Cores and the left factor `L` of the slice rule `Q̄^(j) = Q̄^(m)^{-(d−1)} L Q̂_d^(j)`.
struct Prepared {
    hats: TrDecomposition,
    left: ComplexMatrix,
    product: ComplexMatrix,
}

fn prepare(hats: &TrDecomposition, m: usize, mode: RootProduct) -> Result<Prepared> {
    let d = hats.order();
    let hats = match mode {
        RootProduct::EndCores => normalize_middle_slices(hats, m)?,
        RootProduct::FullChain => hats.clone(),
    };
    let left = match mode {
        RootProduct::EndCores => hats.slice(0, m),
        RootProduct::FullChain => {
            (1..d - 1).fold(hats.slice(0, m), |acc, k| &acc * &hats.slice(k, m))
        }
    };
    let product = &left * &hats.slice(d - 1, m);
    Ok(Prepared {
        hats,
        left,
        product,
    })
}

/// All `d^{r−1}` candidates in lexicographic `(k_2, …, k_r)` order.
pub fn enumerate_candidates(
    product: &ComplexMatrix,
    d: usize,
    pinv_rel_tol: f64,
) -> Result<Vec<RootCandidate>> {
    let r = product.rows();
    let e = numerics::eig(product)?;
    let ratio = numerics::inverse_condition(&e.vectors)?;
    if ratio < pinv_rel_tol {
        return Err(Error::SingularEigvec {
            condition: 1.0 / ratio,
        });
    }
    let mut out = Vec::new();
    let mut ks = vec![0usize; r.saturating_sub(1)];
    loop {
        out.push(RootCandidate::new(&e.vectors, &e.values, d, ks.clone()));
        let mut p = ks.len();
        loop {
            if p == 0 {
                return Ok(out);
            }
            p -= 1;
            ks[p] += 1;
            if ks[p] < d {
                break;
            }
            ks[p] = 0;
        }
    }
}

/// The shared core of a candidate: `Q̄^(j) = (Q̄^(m))^{-(d−1)} L Q̂_d^(j)`.
fn candidate_core(c: &RootCandidate, prep: &Prepared, d: usize) -> Result<ComplexDenseTensor> {
    let bar_m = c.anchor_slice()?;
    let w = &numerics::matrix_power(&bar_m, -(d as i64 - 1))? * &prep.left;
    let slices: Vec<ComplexMatrix> = prep.hats.slices(d - 1).iter().map(|q| &w * q).collect();
    ComplexDenseTensor::from_core_slices(&slices)
}

/// Index tuples used to compare the two products.
#[derive(Debug, Clone, PartialEq)]
pub enum VerifySet {
    Full,
    Sampled(Vec<Vec<usize>>),
}

impl VerifySet {
    pub fn new(n: usize, d: usize, full_limit: usize, budget: usize, seed: u64) -> Self {
        let total = (0..d).try_fold(1usize, |acc, _| acc.checked_mul(n));
        match total {
            Some(t) if t <= full_limit => VerifySet::Full,
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                VerifySet::Sampled(
                    (0..budget)
                        .map(|_| (0..d).map(|_| rng.random_range(0..n)).collect())
                        .collect(),
                )
            }
        }
    }
}

/// Visits `(‖P̂(α) − P̄(α)‖², ‖P̂(α)‖²)` for every tuple; stops when `visit` returns false.
fn walk_products(
    hats: &TrDecomposition,
    bar: &[ComplexMatrix],
    set: &VerifySet,
    mut visit: impl FnMut(f64, f64) -> bool,
) {
    let d = hats.order();
    let r = hats.rank();
    let hat_slices: Vec<Vec<ComplexMatrix>> = (0..d).map(|k| hats.slices(k)).collect();
    let compare = |ph: &ComplexMatrix, pb: &ComplexMatrix| {
        ((ph - pb).norm_fro().powi(2), ph.norm_fro().powi(2))
    };
    match set {
        VerifySet::Sampled(tuples) => {
            for a in tuples {
                let mut ph = ComplexMatrix::identity(r);
                let mut pb = ComplexMatrix::identity(r);
                for (k, &ak) in a.iter().enumerate() {
                    ph = &ph * &hat_slices[k][ak];
                    pb = &pb * &bar[ak];
                }
                let (x, y) = compare(&ph, &pb);
                if !visit(x, y) {
                    return;
                }
            }
        }
        VerifySet::Full => {
            let n = bar.len();
            let mut idx = vec![0usize; d];
            let mut ph = vec![ComplexMatrix::identity(r); d + 1];
            let mut pb = vec![ComplexMatrix::identity(r); d + 1];
            let mut from = 0;
            loop {
                for k in from..d {
                    ph[k + 1] = &ph[k] * &hat_slices[k][idx[k]];
                    pb[k + 1] = &pb[k] * &bar[idx[k]];
                }
                let (x, y) = compare(&ph[d], &pb[d]);
                if !visit(x, y) {
                    return;
                }
                let mut p = d;
                loop {
                    if p == 0 {
                        return;
                    }
                    p -= 1;
                    idx[p] += 1;
                    if idx[p] < n {
                        break;
                    }
                    idx[p] = 0;
                }
                from = p;
            }
        }
    }
}

/// Max over the index set of `‖P̂(α) − P̄(α)‖ / ‖P̂(α)‖`; stops early once above `tol`.
pub fn verify_candidate(
    bar: &ComplexDenseTensor,
    hats: &TrDecomposition,
    tol: f64,
    set: &VerifySet,
) -> (bool, f64) {
    let slices: Vec<ComplexMatrix> = (0..bar.dims()[0]).map(|a| bar.core_slice(a)).collect();
    let mut worst: f64 = 0.0;
    walk_products(hats, &slices, set, |x, y| {
        let rel = if y > 0.0 { (x / y).sqrt() } else { x.sqrt() };
        worst = if rel.is_nan() {
            f64::INFINITY
        } else {
            worst.max(rel)
        };
        worst <= tol
    });
    (worst <= tol, worst)
}

/// `Σ_α ‖P̂(α) − P̄(α)‖²` over the index set.
pub fn candidate_discrepancy(
    bar: &ComplexDenseTensor,
    hats: &TrDecomposition,
    set: &VerifySet,
) -> f64 {
    let slices: Vec<ComplexMatrix> = (0..bar.dims()[0]).map(|a| bar.core_slice(a)).collect();
    let mut total = 0.0;
    walk_products(hats, &slices, set, |x, _| {
        total += x;
        true
    });
    if total.is_nan() {
        f64::INFINITY
    } else {
        total
    }
}

fn check_symmetric_shape(dims: &[usize], r: usize) -> Result<usize> {
    let n = dims[0];
    if dims.iter().any(|&k| k != n) {
        return Err(Error::InvalidArgument(format!(
            "symmetric decomposition needs equal dims, got {:?}",
            dims
        )));
    }
    if dims.len() < 3 {
        return Err(Error::InvalidArgument(
            "symmetric decomposition needs order >= 3".into(),
        ));
    }
    if r < 2 {
        return Err(Error::InvalidArgument(format!(
            "TR-rank r = {} must be >= 2",
            r
        )));
    }
    if n < r * r {
        return Err(Error::DimensionTooSmall {
            mode: 0,
            size: n,
            required: r * r,
        });
    }
    Ok(n)
}

/// Default probes for the symmetric route: a fresh draw with constant γ.
pub fn symmetric_probes(dims: &[usize], r: usize, seed: u64) -> Result<ProbeConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_d5e7);
    let mut p = ProbeConfig::draw(dims, r, &mut rng)?;
    let m = p.gamma[0];
    p.gamma = vec![m; dims.len()];
    Ok(p)
}

/// Generic decomposition on the symmetric sample set, then the root search.
pub fn symmetric_decompose<S: EntrySource + ?Sized>(
    t: &S,
    r: usize,
    cfg: &SymmetricConfig,
) -> Result<SymmetricCore> {
    symmetric_decompose_with_report(t, r, None, cfg).map(|(c, _)| c)
}

pub fn symmetric_decompose_with_report<S: EntrySource + ?Sized>(
    t: &S,
    r: usize,
    probes: Option<&ProbeConfig>,
    cfg: &SymmetricConfig,
) -> Result<(SymmetricCore, SymmetricReport)> {
    let dims = t.dims().to_vec();
    check_symmetric_shape(&dims, r)?;
    let p = match probes {
        Some(p) => p.clone(),
        None => symmetric_probes(&dims, r, cfg.exact.seed)?,
    };
    let opts = PipelineOptions {
        family: FamilySource::CyclicSymmetric,
        ..PipelineOptions::exact()
    };
    let (hats, blostr) = decompose_with_retries(t, r, Some(&p), &cfg.exact, &opts)?;
    let anchor = blostr.probes.gamma[0];
    let (core, residuals) = roots_from_hats(&hats, anchor, cfg)?;
    Ok((
        core,
        SymmetricReport {
            blostr,
            anchor,
            residuals,
        },
    ))
}

/// Root search on a given generic decomposition; returns the first candidate
/// that verifies and the residuals of all candidates examined.
pub fn roots_from_hats(
    hats: &TrDecomposition,
    anchor: usize,
    cfg: &SymmetricConfig,
) -> Result<(SymmetricCore, Vec<f64>)> {
    let d = hats.order();
    let n = hats.dims()[0];
    let prep = prepare(hats, anchor, cfg.product)?;
    let candidates = enumerate_candidates(&prep.product, d, cfg.exact.tol.pinv_rel_tol)?;
    let set = VerifySet::new(
        n,
        d,
        cfg.full_check_limit,
        cfg.index_budget,
        cfg.verify_seed,
    );
    let mut residuals = Vec::with_capacity(candidates.len());
    for c in candidates {
        let core = candidate_core(&c, &prep, d)?;
        let (ok, res) = verify_candidate(&core, &prep.hats, cfg.accept_tol, &set);
        residuals.push(res);
        if ok {
            return Ok((
                SymmetricCore {
                    core,
                    candidate: c,
                    residual: res,
                },
                residuals,
            ));
        }
    }
    Err(Error::NoRootMatches {
        best_residual: residuals.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// The candidate cores of a generic decomposition, in enumeration order.
pub fn candidate_cores(
    hats: &TrDecomposition,
    anchor: usize,
    product: RootProduct,
    pinv_rel_tol: f64,
) -> Result<Vec<(RootCandidate, ComplexDenseTensor)>> {
    let d = hats.order();
    let prep = prepare(hats, anchor, product)?;
    enumerate_candidates(&prep.product, d, pinv_rel_tol)?
        .into_iter()
        .map(|c| {
            let core = candidate_core(&c, &prep, d)?;
            Ok((c, core))
        })
        .collect()
}

/// Candidate with the smallest discrepancy; the first wins ties.
pub fn symmetric_robust_select(
    hats: &TrDecomposition,
    candidates: &[(RootCandidate, ComplexDenseTensor)],
    set: &VerifySet,
) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (_, core)) in candidates.iter().enumerate() {
        let s = candidate_discrepancy(core, hats, set);
        if best.map_or(true, |(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no candidates to select from".into()))
}

/// The shared core a single candidate induces.
pub fn core_for_candidate(
    hats: &TrDecomposition,
    anchor: usize,
    product: RootProduct,
    candidate: &RootCandidate,
) -> Result<ComplexDenseTensor> {
    let prep = prepare(hats, anchor, product)?;
    candidate_core(candidate, &prep, hats.order())
}
