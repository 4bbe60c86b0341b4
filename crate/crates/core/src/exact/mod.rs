//! Exact TR decomposition by blockwise simultaneous diagonalization.
//!
//! The pipeline reads two spectral probes, fixes the blockwise gauge between
//! their eigenbases, recovers the first core and then the remaining cores one
//! at a time from shifted fiber families.

mod gauge;
mod order2;
mod probes;
mod refined;
mod sequential;
mod spectral;

pub use gauge::{gauge_fix, recover_first_core, strided_block, GaugeFix};
pub use order2::{order2_decompose, ORDER2_RANK_TOL};
pub use probes::{
    build_sample_mask, build_symmetric_mask, gamma_size, sequential_family, stack_count,
    ProbeConfig,
};
pub use refined::{
    contraction_plan, refined_decompose, refined_decompose_with_report, refined_sample_mask,
    ContractionPlan, RefinedLayout, RefinedReport,
};
pub use sequential::{
    orthonormalize_left, orthonormalize_right, recover_remaining_cores, FamilySource,
};
pub use spectral::{
    eigenbasis_of, probe_eigenbasis, probe_matrix, EigenBlockBasis, Grouping, SpectrumDiagnostics,
};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::numerics::{self, ToleranceConfig};
use crate::source::{slice_fix_mid, EntrySource};
use crate::tr::{TrDecomposition, TrSource};

/// Default number of probe draws before giving up.
pub const DEFAULT_MAX_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExactConfig {
    pub tol: ToleranceConfig,
    pub max_attempts: usize,
    /// Seed for probe draws and re-draws.
    pub seed: u64,
    /// Largest accepted relative residual on the probe slices; above it the
    /// probes are re-drawn and the best attempt is kept.
    #[cfg_attr(feature = "serde", serde(default = "default_accept_residual"))]
    pub accept_residual: f64,
}

/// Default for [`ExactConfig::accept_residual`].
pub const DEFAULT_ACCEPT_RESIDUAL: f64 = 1e-10;

#[cfg(feature = "serde")]
fn default_accept_residual() -> f64 {
    DEFAULT_ACCEPT_RESIDUAL
}

impl Default for ExactConfig {
    fn default() -> Self {
        ExactConfig {
            tol: ToleranceConfig::exact(),
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            seed: 0,
            accept_residual: DEFAULT_ACCEPT_RESIDUAL,
        }
    }
}

/// Pipeline stage a failure came from; decides which probe component is re-drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Stage {
    ProbePair1,
    ProbePair2,
    Gauge,
    Sequential,
    /// The recovered cores did not reproduce the probe slices.
    Verify,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FailedAttempt {
    pub stage: Stage,
    pub error: String,
    /// Spectra of the probes computed before the failure.
    pub spectra: Vec<SpectrumDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlostrReport {
    /// The probes of the successful attempt.
    pub probes: ProbeConfig,
    pub failures: Vec<FailedAttempt>,
    pub spectra: [SpectrumDiagnostics; 2],
    /// Relative residual of the returned cores on the probe slices.
    pub residual: f64,
}

/// Route-specific switches of the shared pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub grouping: Grouping,
    /// Cluster bases from nullspaces of `M − λ̄I` instead of raw eigenvectors.
    pub nullspace_basis: bool,
    /// Replace each probe slice by its best rank-r² approximation.
    pub truncate_probes: bool,
    pub family: FamilySource,
    /// Re-orthonormalize each recovered core's right bond before the next step.
    pub balance: bool,
}

impl PipelineOptions {
    pub const fn exact() -> Self {
        PipelineOptions {
            grouping: Grouping::Exact,
            nullspace_basis: true,
            truncate_probes: false,
            family: FamilySource::Shifted,
            balance: false,
        }
    }
}

struct StageError {
    stage: Stage,
    error: Error,
    spectra: Vec<SpectrumDiagnostics>,
}

/// Best rank-`k` approximation by truncated SVD.
pub fn truncate_rank(a: &ComplexMatrix, k: usize) -> Result<ComplexMatrix> {
    let s = numerics::svd_thin(a)?;
    let k = k.min(s.s.len());
    let us = ComplexMatrix::from_fn(a.rows(), k, |i, j| s.u[(i, j)] * s.s[j]);
    Ok(&us * &s.v.block(0, a.cols(), 0, k).adjoint())
}

/// `U_a Σ_a V_aᴴ V_b Σ_b^{-1} U_bᴴ` from the rank-r² truncations of both slices.
///
/// Fails when `σ_{r²}(T_b) / σ_1(T_b)` is below `pinv_rel_tol`.
pub fn truncated_probe_matrix<S: EntrySource + ?Sized>(
    t: &S,
    a: &[usize],
    ga: &[usize],
    b: &[usize],
    gb: &[usize],
    r: usize,
    pinv_rel_tol: f64,
) -> Result<ComplexMatrix> {
    let rr = r * r;
    let ta = truncate_rank(&slice_fix_mid(t, a, ga)?, rr)?;
    let sb = numerics::svd_thin(&slice_fix_mid(t, b, gb)?)?;
    let top = sb.s.first().copied().unwrap_or(0.0);
    let ratio = if sb.s.len() < rr || !(top > 0.0) {
        0.0
    } else {
        sb.s[rr - 1] / top
    };
    if ratio < pinv_rel_tol {
        return Err(Error::RankDeficient {
            context: "truncated probe slice".into(),
            ratio,
        });
    }
    let (m, n) = (sb.u.rows(), sb.v.rows());
    let mut pinv_b = ComplexMatrix::zeros(n, m);
    for k in 0..rr {
        let inv = 1.0 / sb.s[k];
        for j in 0..m {
            let uj = sb.u[(j, k)].conj() * inv;
            for i in 0..n {
                pinv_b[(i, j)] += sb.v[(i, k)] * uj;
            }
        }
    }
    Ok(&ta * &pinv_b)
}

#[allow(clippy::too_many_arguments)]
fn pair_basis<S: EntrySource + ?Sized>(
    t: &S,
    r: usize,
    a: &[usize],
    b: &[usize],
    g: &[usize],
    tol: &ToleranceConfig,
    opts: &PipelineOptions,
    salt: u64,
) -> Result<EigenBlockBasis> {
    let m = if opts.truncate_probes {
        truncated_probe_matrix(t, a, g, b, g, r, tol.pinv_rel_tol)?
    } else {
        probe_matrix(t, a, g, b, g, tol.pinv_rel_tol)?
    };
    let grouping = match opts.grouping {
        Grouping::KMeans { restarts, seed } => Grouping::KMeans {
            restarts,
            seed: seed ^ salt,
        },
        g => g,
    };
    eigenbasis_of(&m, r, tol, grouping, opts.nullspace_basis)
}

/// Relative residual `‖T_P − T̂_P‖ / ‖T_P‖` over the four probe slices.
pub fn probe_residual<S: EntrySource + ?Sized>(
    t: &S,
    dec: &TrDecomposition,
    p: &ProbeConfig,
) -> Result<f64> {
    let model = TrSource::new(dec);
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (mid, g) in [
        (&p.alpha, &p.gamma_pair),
        (&p.beta, &p.gamma_pair),
        (&p.alpha_p, &p.gamma_pair_p),
        (&p.beta_p, &p.gamma_pair_p),
    ] {
        let a = slice_fix_mid(t, mid, g)?;
        let b = slice_fix_mid(&model, mid, g)?;
        num += (&a - &b).norm_fro().powi(2);
        den += a.norm_fro().powi(2);
    }
    Ok(if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    })
}

fn run_once<S: EntrySource + ?Sized>(
    t: &S,
    r: usize,
    p: &ProbeConfig,
    tol: &ToleranceConfig,
    opts: &PipelineOptions,
) -> core::result::Result<(TrDecomposition, [SpectrumDiagnostics; 2]), StageError> {
    let fail = |stage, error, spectra: &[SpectrumDiagnostics]| StageError {
        stage,
        error,
        spectra: spectra.to_vec(),
    };
    let e1 = pair_basis(t, r, &p.alpha, &p.beta, &p.gamma_pair, tol, opts, 1)
        .map_err(|e| fail(Stage::ProbePair1, e, &[]))?;
    let s1 = e1.diagnostics;
    let e2 = pair_basis(t, r, &p.alpha_p, &p.beta_p, &p.gamma_pair_p, tol, opts, 2)
        .map_err(|e| fail(Stage::ProbePair2, e, &[s1]))?;
    let s2 = e2.diagnostics;
    let gf = gauge_fix(&e1.e, &e2.e, r, tol.pinv_rel_tol)
        .map_err(|e| fail(Stage::Gauge, e, &[s1, s2]))?;
    let q1 = recover_first_core(&e1.e, &gf).map_err(|e| fail(Stage::Gauge, e, &[s1, s2]))?;
    let dec = recover_remaining_cores(t, q1, r, p, tol.pinv_rel_tol, opts.family, opts.balance)
        .map_err(|e| fail(Stage::Sequential, e, &[s1, s2]))?;
    Ok((dec, [s1, s2]))
}

/// Runs the pipeline with probe re-draws on probe failures and on a probe
/// residual above `cfg.accept_residual`.
///
/// Mid modes may be smaller than r² (their sequential families are stacked);
/// the first and last modes may not.
pub fn decompose_with_retries<S: EntrySource + ?Sized>(
    t: &S,
    r: usize,
    probes: Option<&ProbeConfig>,
    cfg: &ExactConfig,
    opts: &PipelineOptions,
) -> Result<(TrDecomposition, BlostrReport)> {
    cfg.tol.validate()?;
    let dims = t.dims().to_vec();
    let d = dims.len();
    let constant_gamma = opts.family == FamilySource::CyclicSymmetric;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = match probes {
        Some(p) => {
            p.validate(&dims, r)?;
            p.clone()
        }
        None => ProbeConfig::draw(&dims, r, &mut rng)?,
    };
    if constant_gamma && p.gamma.iter().any(|&g| g != p.gamma[0]) {
        return Err(Error::InvalidArgument(
            "symmetric recovery needs a constant gamma".into(),
        ));
    }
    let mut failures: Vec<FailedAttempt> = Vec::new();
    let mut best: Option<(TrDecomposition, ProbeConfig, [SpectrumDiagnostics; 2], f64)> = None;
    let finish = |best: (TrDecomposition, ProbeConfig, [SpectrumDiagnostics; 2], f64), failures| {
        let (dec, probes, spectra, residual) = best;
        (
            dec,
            BlostrReport {
                probes,
                failures,
                spectra,
                residual,
            },
        )
    };
    for _ in 0..cfg.max_attempts.max(1) {
        let (stage, error, spectra) = match run_once(t, r, &p, &cfg.tol, opts) {
            Ok((dec, spectra)) => {
                let residual = match probe_residual(t, &dec, &p) {
                    Ok(v) if v.is_finite() => v,
                    Ok(_) => f64::INFINITY,
                    Err(e) => return Err(e),
                };
                if residual <= cfg.accept_residual {
                    return Ok(finish((dec, p, spectra, residual), failures));
                }
                let better = best.as_ref().map_or(true, |b| residual < b.3);
                let err = Error::RankDeficient {
                    context: "probe-slice residual".into(),
                    ratio: residual,
                };
                if better {
                    best = Some((dec, p.clone(), spectra, residual));
                }
                (Stage::Verify, err, spectra.to_vec())
            }
            Err(StageError {
                stage,
                error,
                spectra,
            }) => {
                if !error.is_probe_failure() {
                    // Entries outside a fixed sample set cannot be re-drawn.
                    if let (Some(b), Error::MaskViolation { .. }) = (best.take(), &error) {
                        return Ok(finish(b, failures));
                    }
                    return Err(error);
                }
                (stage, error, spectra)
            }
        };
        let rank_issue = matches!(error, Error::RankDeficient { .. }) && stage != Stage::Verify;
        failures.push(FailedAttempt {
            stage,
            error: error.to_string(),
            spectra,
        });
        match stage {
            Stage::ProbePair1 => p.redraw_pair(&dims, &mut rng, false)?,
            Stage::ProbePair2 | Stage::Gauge => p.redraw_pair(&dims, &mut rng, true)?,
            Stage::Sequential | Stage::Verify => {
                if stage == Stage::Verify {
                    p.redraw_pair(&dims, &mut rng, true)?;
                }
                p.redraw_sequential(&dims, r, &mut rng);
                if constant_gamma {
                    let g0 = p.gamma[0] % dims.iter().copied().min().unwrap_or(1);
                    p.gamma = alloc::vec![g0; d];
                }
            }
        }
        if rank_issue && stage != Stage::Sequential {
            p.redraw_probe_columns(&dims, r, &mut rng);
        }
    }
    if let Some(b) = best {
        return Ok(finish(b, failures));
    }
    Err(Error::RetriesExhausted {
        attempts: failures.len(),
        diagnostics: failures
            .iter()
            .map(|f| {
                let gaps: Vec<String> = f
                    .spectra
                    .iter()
                    .map(|s| format!("{:.2e}", s.min_gap))
                    .collect();
                format!("{:?}: {} (gaps [{}])", f.stage, f.error, gaps.join(", "))
            })
            .collect(),
    })
}

fn check_blostr_shape(dims: &[usize], r: usize) -> Result<()> {
    if dims.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "blostr needs order >= 3, got {} (use order2_decompose)",
            dims.len()
        )));
    }
    if r < 2 {
        return Err(Error::InvalidArgument(format!(
            "TR-rank r = {} must be >= 2",
            r
        )));
    }
    if let Some(k) = dims.iter().position(|&n| n < r * r) {
        return Err(Error::DimensionTooSmall {
            mode: k,
            size: dims[k],
            required: r * r,
        });
    }
    Ok(())
}

/// Exact TR decomposition of a tensor with every `n_k ≥ r²`.
pub fn blostr_decompose<S: EntrySource + ?Sized>(
    t: &S,
    r: usize,
    probes: Option<&ProbeConfig>,
    cfg: &ExactConfig,
) -> Result<TrDecomposition> {
    blostr_decompose_with_report(t, r, probes, cfg).map(|(d, _)| d)
}

pub fn blostr_decompose_with_report<S: EntrySource + ?Sized>(
    t: &S,
    r: usize,
    probes: Option<&ProbeConfig>,
    cfg: &ExactConfig,
) -> Result<(TrDecomposition, BlostrReport)> {
    check_blostr_shape(t.dims(), r)?;
    decompose_with_retries(t, r, probes, cfg, &PipelineOptions::exact())
}
