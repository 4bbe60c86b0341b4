//! Noise-tolerant decomposition: a spectral initialization from truncated
//! probes and balanced eigenvalue clustering, refined by masked alternating
//! least squares.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exact::{
    decompose_with_retries, truncated_probe_matrix, BlostrReport, ExactConfig, FamilySource,
    Grouping, PipelineOptions, ProbeConfig,
};
use crate::mask::SampleMask;
use crate::matrix::ComplexMatrix;
use crate::numerics::{self, ToleranceConfig};
use crate::random::{random_tr, Field};
use crate::source::EntrySource;
use crate::tensor::unravel_index;
use crate::tr::TrDecomposition;
use crate::C64;

pub use crate::kmeans::{constrained_kmeans, ClusterAssignment};

/// Default k-means restarts.
pub const DEFAULT_RESTARTS: usize = 10;
/// Default for [`RobustConfig::init_draws`].
pub const DEFAULT_INIT_DRAWS: usize = 1;
/// Default sweep budget.
pub const DEFAULT_T_MAX: usize = 100;
/// Default stopping threshold relative to `‖T_Δ‖`.
pub const DEFAULT_REL_EPS: f64 = 1e-10;

/// `T_r²(:,a,Γa) · pinv(T_r²(:,b,Γb))`.
pub fn truncated_probe<S: EntrySource + ?Sized>(
    t: &S,
    a: &[usize],
    ga: &[usize],
    b: &[usize],
    gb: &[usize],
    r: usize,
    tol: &ToleranceConfig,
) -> Result<ComplexMatrix> {
    truncated_probe_matrix(t, a, ga, b, gb, r, tol.pinv_rel_tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum InitKind {
    Blostr,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RobustConfig {
    pub tol: ToleranceConfig,
    pub max_attempts: usize,
    /// Independent probe draws tried by [`robust_init`] when no probes are
    /// given; the one with the smallest probe-slice residual is kept.
    pub init_draws: usize,
    /// Probe-slice residual that ends the re-draw loop of each init draw.
    pub accept_residual: f64,
    pub restarts: usize,
    /// Absolute stopping threshold; `None` means `1e-10 · ‖T_Δ‖`.
    pub eps: Option<f64>,
    pub t_max: usize,
    pub init: InitKind,
    pub seed: u64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            tol: ToleranceConfig::robust(),
            max_attempts: crate::exact::DEFAULT_MAX_ATTEMPTS,
            init_draws: DEFAULT_INIT_DRAWS,
            accept_residual: crate::exact::DEFAULT_ACCEPT_RESIDUAL,
            restarts: DEFAULT_RESTARTS,
            eps: None,
            t_max: DEFAULT_T_MAX,
            init: InitKind::Blostr,
            seed: 0,
        }
    }
}

impl RobustConfig {
    fn exact_config(&self) -> ExactConfig {
        ExactConfig {
            tol: self.tol,
            max_attempts: self.max_attempts,
            seed: self.seed,
            accept_residual: self.accept_residual,
        }
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            grouping: Grouping::KMeans {
                restarts: self.restarts,
                seed: self.seed,
            },
            nullspace_basis: false,
            truncate_probes: true,
            family: FamilySource::Shifted,
            balance: false,
        }
    }
}

/// Spectral initialization: truncated probes, k-means clusters and raw
/// eigenvectors, then the exact gauge fix and sequential recovery.
pub fn robust_init<S: EntrySource + ?Sized>(
    t: &S,
    r: usize,
    probes: Option<&ProbeConfig>,
    cfg: &RobustConfig,
) -> Result<(TrDecomposition, BlostrReport)> {
    let dims = t.dims();
    if dims.len() < 3 || r < 2 {
        return Err(Error::InvalidArgument(format!(
            "robust route needs order >= 3 and r >= 2, got order {} and r = {}",
            dims.len(),
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
    let opts = cfg.pipeline_options();
    let mut ec = cfg.exact_config();
    let draws = if probes.is_some() {
        1
    } else {
        cfg.init_draws.max(1)
    };
    let mut best: Option<(TrDecomposition, BlostrReport)> = None;
    let mut last_err = None;
    for i in 0..draws {
        ec.seed = cfg.seed.wrapping_add(i as u64);
        match decompose_with_retries(t, r, probes, &ec, &opts) {
            Ok(out) => {
                if best
                    .as_ref()
                    .map_or(true, |b| out.1.residual < b.1.residual)
                {
                    best = Some(out);
                }
            }
            Err(e) => {
                let stop = matches!(e, Error::MaskViolation { .. });
                last_err = Some(e);
                if stop {
                    break;
                }
            }
        }
    }
    match (best, last_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one draw runs"),
    }
}

/// Observed entries `T_Δ` in linear-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    dims: Vec<usize>,
    /// Multi-indices, `d` per observation.
    index: Vec<usize>,
    values: Vec<C64>,
}

impl Observations {
    /// Reads every entry of `mask` from `t`.
    pub fn from_mask<S: EntrySource + ?Sized>(t: &S, mask: &SampleMask) -> Result<Self> {
        let dims = t.dims().to_vec();
        if mask.dims() != dims.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "mask dims {:?} vs tensor dims {:?}",
                mask.dims(),
                dims
            )));
        }
        let d = dims.len();
        let mut index = Vec::with_capacity(mask.len() * d);
        let mut values = Vec::with_capacity(mask.len());
        let mut idx = vec![0; d];
        for lin in mask.linear_indices() {
            unravel_index(&dims, lin, &mut idx);
            values.push(t.entry(&idx)?);
            index.extend_from_slice(&idx);
        }
        Ok(Observations {
            dims,
            index,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn index_of(&self, i: usize) -> &[usize] {
        let d = self.dims.len();
        &self.index[i * d..(i + 1) * d]
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `J_{k,ℓ}`: observations with `α_k = ℓ`, for every ℓ.
    pub fn rows_of_mode(&self, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.dims[k]];
        for i in 0..self.len() {
            out[self.index_of(i)[k]].push(i);
        }
        out
    }
}

/// Column-major r×r product `out = a b`.
fn mul_into(a: &[C64], b: &[C64], out: &mut [C64], r: usize) {
    for j in 0..r {
        for i in 0..r {
            let mut s = C64::new(0.0, 0.0);
            for l in 0..r {
                s += a[i + l * r] * b[l + j * r];
            }
            out[i + j * r] = s;
        }
    }
}

/// Slices of every core as flat column-major r×r blocks.
fn flat_slices(dec: &TrDecomposition) -> Vec<Vec<Vec<C64>>> {
    (0..dec.order())
        .map(|k| dec.slices(k).into_iter().map(|s| s.into_vec()).collect())
        .collect()
}

/// `Q_{k+1}^(α_{k+1}) ⋯ Q_{k−1}^(α_{k−1})`, the ring product without core k.
fn environment(
    slices: &[Vec<Vec<C64>>],
    alpha: &[usize],
    k: usize,
    r: usize,
    buf: &mut [C64],
    out: &mut [C64],
) {
    let d = slices.len();
    out.copy_from_slice(&slices[(k + 1) % d][alpha[(k + 1) % d]]);
    for step in 2..d {
        let m = (k + step) % d;
        mul_into(out, &slices[m][alpha[m]], buf, r);
        out.copy_from_slice(buf);
    }
}

/// `‖T_Δ − R(Q)_Δ‖_F`.
pub fn masked_residual(dec: &TrDecomposition, obs: &Observations) -> f64 {
    let r = dec.rank();
    let slices = flat_slices(dec);
    let mut env = vec![C64::new(0.0, 0.0); r * r];
    let mut buf = env.clone();
    let mut total = 0.0;
    for i in 0..obs.len() {
        let alpha = obs.index_of(i);
        environment(&slices, alpha, 0, r, &mut buf, &mut env);
        let mut prod = vec![C64::new(0.0, 0.0); r * r];
        mul_into(&slices[0][alpha[0]], &env, &mut prod, r);
        let tr: C64 = (0..r).map(|a| prod[a + a * r]).sum();
        total += (obs.values[i] - tr).norm_sqr();
    }
    total.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsState {
    pub cores: TrDecomposition,
    pub iteration: usize,
    /// Masked residual before the first sweep and after each sweep.
    pub history: Vec<f64>,
}

impl AlsState {
    pub fn new(cores: TrDecomposition, obs: &Observations) -> Self {
        let h = masked_residual(&cores, obs);
        AlsState {
            cores,
            iteration: 0,
            history: vec![h],
        }
    }
}

/// Least-squares design of one row problem: `T(α) = tr(Q_k^(ℓ) M_α) = Σ_{a,b} Q(a,b) M_α(b,a)`,
/// so column `a + r b` of the design holds `M_α(b,a)`.
pub fn row_design(
    dec: &TrDecomposition,
    obs: &Observations,
    k: usize,
    rows: &[usize],
) -> (ComplexMatrix, ComplexMatrix) {
    let r = dec.rank();
    let slices = flat_slices(dec);
    design_from_slices(&slices, obs, k, rows, r)
}

fn design_from_slices(
    slices: &[Vec<Vec<C64>>],
    obs: &Observations,
    k: usize,
    rows: &[usize],
    r: usize,
) -> (ComplexMatrix, ComplexMatrix) {
    let rr = r * r;
    let mut a = ComplexMatrix::zeros(rows.len(), rr);
    let mut rhs = ComplexMatrix::zeros(rows.len(), 1);
    let mut env = vec![C64::new(0.0, 0.0); rr];
    let mut buf = env.clone();
    for (row, &i) in rows.iter().enumerate() {
        environment(slices, obs.index_of(i), k, r, &mut buf, &mut env);
        for bcol in 0..r {
            for arow in 0..r {
                a[(row, arow + r * bcol)] = env[bcol + arow * r];
            }
        }
        rhs[(row, 0)] = obs.values[i];
    }
    (a, rhs)
}

/// One Gauss-Seidel sweep over the cores; rows with no observations keep
/// their previous value.
pub fn masked_als_sweep(state: &mut AlsState, obs: &Observations, rel_tol: f64) -> Result<()> {
    let d = state.cores.order();
    let r = state.cores.rank();
    if obs.dims() != state.cores.dims().as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "observations over {:?} for cores of dims {:?}",
            obs.dims(),
            state.cores.dims()
        )));
    }
    let mut slices = flat_slices(&state.cores);
    for k in 0..d {
        for (l, rows) in obs.rows_of_mode(k).iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let (a, rhs) = design_from_slices(&slices, obs, k, rows, r);
            let q = numerics::lstsq(&a, &rhs, rel_tol)?;
            if q.is_finite() {
                slices[k][l] = q.into_vec();
            }
        }
    }
    let mats: Vec<Vec<ComplexMatrix>> = slices
        .into_iter()
        .map(|core| {
            core.into_iter()
                .map(|s| ComplexMatrix::from_col_major(r, r, s))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    state.cores = TrDecomposition::from_slices(&mats)?;
    state.iteration += 1;
    state.history.push(masked_residual(&state.cores, obs));
    Ok(())
}

/// Runs sweeps until the masked residual drops below `eps` or `t_max` sweeps are done.
pub fn run_als(
    state: &mut AlsState,
    obs: &Observations,
    eps: f64,
    t_max: usize,
    rel_tol: f64,
) -> Result<()> {
    while state.history.last().copied().unwrap_or(f64::INFINITY) >= eps && state.iteration < t_max {
        masked_als_sweep(state, obs, rel_tol)?;
    }
    Ok(())
}

/// Gaussian cores rescaled so that `‖R_Δ‖ = ‖T_Δ‖`.
pub fn random_init(
    dims: &[usize],
    r: usize,
    obs: &Observations,
    seed: u64,
) -> Result<TrDecomposition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dec = random_tr(&mut rng, dims, r, 1.0, Field::Complex)?;
    let zeros = Observations {
        values: vec![C64::new(0.0, 0.0); obs.len()],
        ..obs.clone()
    };
    let model = masked_residual(&dec, &zeros);
    let target = obs.norm();
    if model > 0.0 && target > 0.0 {
        let s = (target / model).powf(1.0 / dims.len() as f64);
        for k in 0..dims.len() {
            dec.scale_core(k, C64::new(s, 0.0));
        }
    }
    Ok(dec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustOutcome {
    pub state: AlsState,
    pub eps: f64,
    /// Present when the spectral initialization was used.
    pub init_report: Option<BlostrReport>,
}

impl RobustOutcome {
    pub fn cores(&self) -> &TrDecomposition {
        &self.state.cores
    }
}

/// Initialization followed by masked ALS on the entries of `mask`.
pub fn robust_decompose<S: EntrySource + ?Sized>(
    t: &S,
    mask: &SampleMask,
    r: usize,
    probes: Option<&ProbeConfig>,
    cfg: &RobustConfig,
) -> Result<RobustOutcome> {
    cfg.tol.validate()?;
    let obs = Observations::from_mask(t, mask)?;
    let eps = cfg.eps.unwrap_or(DEFAULT_REL_EPS * obs.norm());
    let (init, init_report) = match cfg.init {
        InitKind::Blostr => {
            let (dec, rep) = robust_init(t, r, probes, cfg)?;
            (dec, Some(rep))
        }
        InitKind::Random => (random_init(t.dims(), r, &obs, cfg.seed)?, None),
    };
    let mut state = AlsState::new(init, &obs);
    run_als(&mut state, &obs, eps, cfg.t_max, cfg.tol.pinv_rel_tol)?;
    Ok(RobustOutcome {
        state,
        eps,
        init_report,
    })
}
