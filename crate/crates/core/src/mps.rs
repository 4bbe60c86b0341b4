//! Matrix product states: 3-body marginals, probe extraction from marginals,
//! pairwise core recovery and gauge stitching.

use alloc::collections::{btree_map, BTreeMap};
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exact::{eigenbasis_of, gauge_fix, recover_first_core, Grouping, SpectrumDiagnostics};
use crate::matrix::ComplexMatrix;
use crate::numerics::{self, ToleranceConfig};
use crate::random::{gaussian, random_tr, Field};
use crate::tensor::{checked_numel, next_index, reshape_from_bracket, ComplexDenseTensor};
use crate::tr::{for_each_entry, tr_evaluate, TrDecomposition};
use crate::C64;

/// Largest state (entries) the dense marginal path will materialize.
pub const DENSE_STATE_LIMIT: usize = 1 << 22;

/// An MPS `|ψ⟩ = Σ tr(Q_1^(α_1) ⋯ Q_d^(α_d)) |α_1 … α_d⟩`.
#[derive(Debug, Clone)]
pub struct MpsState {
    cores: TrDecomposition,
    norm_sqr: core::cell::Cell<Option<f64>>,
}

impl MpsState {
    pub fn new(cores: TrDecomposition) -> Result<Self> {
        if cores.order() < 2 {
            return Err(Error::InvalidArgument(
                "an MPS needs at least two sites".into(),
            ));
        }
        Ok(MpsState {
            cores,
            norm_sqr: core::cell::Cell::new(None),
        })
    }

    /// Complex Gaussian cores, rescaled so that `‖ψ‖ = 1`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dims: &[usize], r: usize) -> Result<Self> {
        let cores = random_tr(rng, dims, r, 1.0, Field::Complex)?;
        let mut s = Self::new(cores)?;
        s.normalize()?;
        Ok(s)
    }

    pub fn cores(&self) -> &TrDecomposition {
        &self.cores
    }

    pub fn dims(&self) -> Vec<usize> {
        self.cores.dims()
    }

    pub fn rank(&self) -> usize {
        self.cores.rank()
    }

    pub fn entry(&self, index: &[usize]) -> Result<C64> {
        tr_evaluate(&self.cores, index)
    }

    /// `⟨ψ|ψ⟩`, from the transfer matrices.
    pub fn norm_sqr(&self) -> f64 {
        if let Some(v) = self.norm_sqr.get() {
            return v;
        }
        let d = self.cores.order();
        let mut p = ComplexMatrix::identity(self.rank() * self.rank());
        for k in 0..d {
            p = &p * &transfer(&self.cores, k);
        }
        let v = p.trace().re;
        self.norm_sqr.set(Some(v));
        v
    }

    /// Scales every core by `‖ψ‖^{-1/d}`.
    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm_sqr();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidArgument(
                "state has zero or non-finite norm".into(),
            ));
        }
        let s = n.powf(-0.5 / self.cores.order() as f64);
        for k in 0..self.cores.order() {
            self.cores.scale_core(k, C64::new(s, 0.0));
        }
        self.norm_sqr.set(None);
        Ok(())
    }

    /// The full state vector, column-major over `(α_1, …, α_d)`.
    pub fn dense(&self, limit: usize) -> Result<ComplexDenseTensor> {
        crate::tr::tr_reconstruct(&self.cores, limit)
    }
}

/// `E_k = Σ_α Q_k^(α) ⊗ conj(Q_k^(α))`.
fn transfer(dec: &TrDecomposition, k: usize) -> ComplexMatrix {
    let r = dec.rank();
    let mut e = ComplexMatrix::zeros(r * r, r * r);
    for q in dec.slices(k) {
        e = &e + &q.kron(&q.conj());
    }
    e
}

/// `ρ^S = tr_{S^c} |ψ⟩⟨ψ|` for an ordered 3-subset `S`.
///
/// Row and column indices run over `(α_{s_0}, α_{s_1}, α_{s_2})` with `s_0` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTensor {
    pub modes: [usize; 3],
    pub dims: [usize; 3],
    pub rho: ComplexMatrix,
}

impl MarginalTensor {
    pub fn size(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn index(&self, a: [usize; 3]) -> usize {
        a[0] + self.dims[0] * (a[1] + self.dims[1] * a[2])
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    /// `‖ρ − ρ*‖_max / ‖ρ‖_max`.
    pub fn hermitian_defect(&self) -> f64 {
        let m = self.rho.max_abs();
        if m == 0.0 {
            return 0.0;
        }
        (&self.rho - &self.rho.adjoint()).max_abs() / m
    }

    /// Position of `mode` within `modes`.
    fn slot(&self, mode: usize) -> Result<usize> {
        self.modes.iter().position(|&m| m == mode).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "mode {} is not in the marginal {:?}",
                mode, self.modes
            ))
        })
    }
}

fn check_subset(d: usize, s: [usize; 3]) -> Result<()> {
    if s.iter().any(|&m| m >= d) || s[0] == s[1] || s[1] == s[2] || s[0] == s[2] {
        return Err(Error::InvalidArgument(format!(
            "{:?} is not a 3-subset of {} sites",
            s, d
        )));
    }
    Ok(())
}

/// Marginal by ring contraction of the doubled network; never forms `|ψ⟩`.
pub fn simulate_marginal(psi: &MpsState, s: [usize; 3]) -> Result<MarginalTensor> {
    let dec = psi.cores();
    let d = dec.order();
    check_subset(d, s)?;
    let r = dec.rank();
    let dims = dec.dims();
    let sd = [dims[s[0]], dims[s[1]], dims[s[2]]];
    // Walk the ring from s[0]: kept sites in ring order with the traced
    // segment that follows each of them.
    let mut ring: Vec<usize> = s.to_vec();
    ring.sort_by_key(|&m| (m + d - s[0]) % d);
    let mut segs = Vec::with_capacity(3);
    for (i, &m) in ring.iter().enumerate() {
        let next = ring[(i + 1) % 3];
        let mut seg = ComplexMatrix::identity(r * r);
        let mut k = (m + 1) % d;
        while k != next {
            seg = &seg * &transfer(dec, k);
            k = (k + 1) % d;
        }
        segs.push(seg);
    }
    // blocks[i][(a, b)] = (Q^(a) ⊗ conj Q^(b)) · seg_i for ring site i.
    let blocks: Vec<Vec<ComplexMatrix>> = ring
        .iter()
        .zip(&segs)
        .map(|(&m, seg)| {
            let sl = dec.slices(m);
            let n = sl.len();
            let mut out = Vec::with_capacity(n * n);
            for b in 0..n {
                for a in 0..n {
                    out.push(&sl[a].kron(&sl[b].conj()) * seg);
                }
            }
            out
        })
        .collect();
    let pos: Vec<usize> = ring
        .iter()
        .map(|m| s.iter().position(|x| x == m).unwrap())
        .collect();
    let size: usize = sd.iter().product();
    let mut rho = ComplexMatrix::zeros(size, size);
    let idx = |a: [usize; 3]| a[0] + sd[0] * (a[1] + sd[1] * a[2]);
    let n0 = dims[ring[0]];
    let n1 = dims[ring[1]];
    let n2 = dims[ring[2]];
    for b0 in 0..n0 {
        for a0 in 0..n0 {
            let x0 = &blocks[0][a0 + n0 * b0];
            for b1 in 0..n1 {
                for a1 in 0..n1 {
                    let x01 = x0 * &blocks[1][a1 + n1 * b1];
                    for b2 in 0..n2 {
                        for a2 in 0..n2 {
                            let v = trace_product(&x01, &blocks[2][a2 + n2 * b2]);
                            let (mut ra, mut rb) = ([0; 3], [0; 3]);
                            for (i, (a, b)) in
                                [(a0, b0), (a1, b1), (a2, b2)].into_iter().enumerate()
                            {
                                ra[pos[i]] = a;
                                rb[pos[i]] = b;
                            }
                            rho[(idx(ra), idx(rb))] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(MarginalTensor {
        modes: s,
        dims: sd,
        rho,
    })
}

/// `tr(A B)` without forming the product.
fn trace_product(a: &ComplexMatrix, b: &ComplexMatrix) -> C64 {
    let mut t = C64::new(0.0, 0.0);
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            t += a[(i, j)] * b[(j, i)];
        }
    }
    t
}

/// Marginal from the materialized state: `ρ(α, β) = Σ_γ ψ(αγ) conj ψ(βγ)`.
pub fn dense_marginal(psi: &MpsState, s: [usize; 3], limit: usize) -> Result<MarginalTensor> {
    let dims = psi.dims();
    let d = dims.len();
    check_subset(d, s)?;
    let t = psi.dense(limit)?;
    let sd = [dims[s[0]], dims[s[1]], dims[s[2]]];
    let size: usize = sd.iter().product();
    let rest: Vec<usize> = (0..d).filter(|m| !s.contains(m)).collect();
    let rest_dims: Vec<usize> = rest.iter().map(|&m| dims[m]).collect();
    let mut rho = ComplexMatrix::zeros(size, size);
    let mut full = vec![0; d];
    let mut cols: Vec<Vec<C64>> = Vec::new();
    let mut g = vec![0; rest.len()];
    loop {
        for (i, &m) in rest.iter().enumerate() {
            full[m] = g[i];
        }
        let mut col = Vec::with_capacity(size);
        let mut a = [0usize; 3];
        loop {
            for i in 0..3 {
                full[s[i]] = a[i];
            }
            col.push(t.at(&full));
            if !next_index(&sd, &mut a) {
                break;
            }
        }
        cols.push(col);
        if rest.is_empty() || !next_index(&rest_dims, &mut g) {
            break;
        }
    }
    for col in &cols {
        for j in 0..size {
            let cj = col[j].conj();
            for i in 0..size {
                rho[(i, j)] += col[i] * cj;
            }
        }
    }
    Ok(MarginalTensor {
        modes: s,
        dims: sd,
        rho,
    })
}

/// Anything that hands out 3-body marginals of a fixed state.
pub trait MarginalSource {
    fn dims(&self) -> Vec<usize>;

    fn marginal(&self, s: [usize; 3]) -> Result<MarginalTensor>;
}

impl MarginalSource for MpsState {
    fn dims(&self) -> Vec<usize> {
        MpsState::dims(self)
    }

    fn marginal(&self, s: [usize; 3]) -> Result<MarginalTensor> {
        simulate_marginal(self, s)
    }
}

/// Exact marginals plus Hermitian Gaussian perturbation of entry std `sigma`,
/// seeded per subset.
#[derive(Debug, Clone)]
pub struct NoisyMarginals<'a> {
    pub psi: &'a MpsState,
    pub sigma: f64,
    pub seed: u64,
}

impl MarginalSource for NoisyMarginals<'_> {
    fn dims(&self) -> Vec<usize> {
        self.psi.dims()
    }

    fn marginal(&self, s: [usize; 3]) -> Result<MarginalTensor> {
        let mut m = simulate_marginal(self.psi, s)?;
        let salt = (s[0] as u64) | (s[1] as u64) << 16 | (s[2] as u64) << 32;
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let n = m.rho.rows();
        let w = ComplexMatrix::from_fn(n, n, |_, _| gaussian(&mut rng, self.sigma, Field::Complex));
        let h = (&w + &w.adjoint()).scale(C64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0));
        m.rho = &m.rho + &h;
        Ok(m)
    }
}

/// One probe choice `(h, v)` for the pair `(j, k)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeChoice {
    pub h: usize,
    pub v: Vec<C64>,
}

/// `M^{h,v}_{j,k}` (n_k × n_j): contract `ρ^{h,j,k}` with `v v*` on mode h and
/// keep the entries whose primed j and k indices are 0.
///
/// Up to the scalar `conj ψ`-weighted sum, this is `Q_k⟨1⟩ (I ⊗ R^{h,v}) Q_j[1]ᵀ`.
pub fn extract_probe_matrix(
    rho: &MarginalTensor,
    j: usize,
    k: usize,
    h: usize,
    v: &[C64],
) -> Result<ComplexMatrix> {
    let (sj, sk, sh) = (rho.slot(j)?, rho.slot(k)?, rho.slot(h)?);
    let (nj, nk, nh) = (rho.dims[sj], rho.dims[sk], rho.dims[sh]);
    if v.len() != nh {
        return Err(Error::ShapeMismatch(format!(
            "v has {} entries for a mode of size {}",
            v.len(),
            nh
        )));
    }
    let mut m = ComplexMatrix::zeros(nk, nj);
    let mut row = [0usize; 3];
    let mut col = [0usize; 3];
    for aj in 0..nj {
        for ak in 0..nk {
            let mut acc = C64::new(0.0, 0.0);
            for ah in 0..nh {
                for bh in 0..nh {
                    row[sj] = aj;
                    row[sk] = ak;
                    row[sh] = ah;
                    col[sj] = 0;
                    col[sk] = 0;
                    col[sh] = bh;
                    acc += v[ah] * v[bh].conj() * rho.rho[(rho.index(row), rho.index(col))];
                }
            }
            m[(ak, aj)] = acc;
        }
    }
    let scale = m.max_abs();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::ZeroProbe);
    }
    Ok(m)
}

/// `Q̂_k` and `Q̃_j` from one consecutive pair, plus spectrum diagnostics.
#[derive(Debug, Clone)]
pub struct RecoveredPair {
    pub j: usize,
    pub k: usize,
    /// Core k in the gauge fixed by the probes.
    pub q_hat_k: ComplexDenseTensor,
    /// Core j with the first probe's middle product absorbed on its left bond.
    pub q_tilde_j: ComplexDenseTensor,
    pub spectra: [SpectrumDiagnostics; 2],
    pub choices: Vec<ProbeChoice>,
}

/// Steps 1 to 3 of the exact route on the four probe matrices, then
/// `Q̃_j[1] = (pinv(Q̂_k⟨1⟩) M_1)ᵀ`.
pub fn recover_pair(
    ms: &[ComplexMatrix; 4],
    j: usize,
    k: usize,
    r: usize,
    tol: &ToleranceConfig,
    grouping: Grouping,
) -> Result<RecoveredPair> {
    let rr = r * r;
    let (nk, nj) = ms[0].shape();
    if nk < rr || nj < rr {
        return Err(Error::DimensionTooSmall {
            mode: if nk < rr { k } else { j },
            size: nk.min(nj),
            required: rr,
        });
    }
    if ms.iter().any(|m| m.shape() != (nk, nj)) {
        return Err(Error::ShapeMismatch(
            "probe matrices differ in shape".into(),
        ));
    }
    let probe = |a: &ComplexMatrix, b: &ComplexMatrix| -> Result<ComplexMatrix> {
        Ok(a * &numerics::pinv(b, Some(rr), tol.pinv_rel_tol)?)
    };
    let nullspace = grouping == Grouping::Exact;
    let e1 = eigenbasis_of(&probe(&ms[0], &ms[1])?, r, tol, grouping, nullspace)?;
    let e2 = eigenbasis_of(&probe(&ms[2], &ms[3])?, r, tol, grouping, nullspace)?;
    let gf = gauge_fix(&e1.e, &e2.e, r, tol.pinv_rel_tol)?;
    let q_hat_k = recover_first_core(&e1.e, &gf)?;
    let qk = q_hat_k.matricize_angle(0)?;
    if numerics::inverse_condition(&qk)? < tol.pinv_rel_tol {
        return Err(Error::RankDeficient {
            context: format!("recovered core {} unfolding", k),
            ratio: numerics::inverse_condition(&qk)?,
        });
    }
    let z = &numerics::pinv(&qk, Some(rr), tol.pinv_rel_tol)? * &ms[0];
    let q_tilde_j = reshape_from_bracket(&z.transpose(), &[nj, r, r], 0)?;
    Ok(RecoveredPair {
        j,
        k,
        q_hat_k,
        q_tilde_j,
        spectra: [e1.diagnostics, e2.diagnostics],
        choices: Vec::new(),
    })
}

/// Gauge link between the two estimates of one core.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeLink {
    pub n: ComplexMatrix,
    /// Factor applied to the stitched core; 1 without determinant rescaling.
    pub scale: C64,
    /// `σ_min / σ_max` of `N`.
    pub inverse_condition: f64,
}

/// `n × r²` unfolding with column `a + r·b`, i.e. the raw core storage.
fn core_unfolding(q: &ComplexDenseTensor) -> Result<ComplexMatrix> {
    let n = q.dims()[0];
    let r = q.dims()[1];
    ComplexMatrix::from_col_major(n, r * r, q.as_slice().to_vec())
}

/// `N_m`: with `Q̂_m^(α) = X_m^{-1} Q_m^(α) Y_m` and `Q̃_m^(α) = W Q_m^(α) X_{m+1}`,
/// `pinv(Q̂_m) Q̃_m = N ⊗ Pᵀ` for `N = Y_m^{-1} X_{m+1}` and `P = W X_m`. The
/// strided block at (0, 0) is `P(0,0)·N`.
pub fn gauge_link(
    q_hat: &ComplexDenseTensor,
    q_tilde: &ComplexDenseTensor,
    tol: &ToleranceConfig,
) -> Result<ComplexMatrix> {
    let r = q_hat.dims()[1];
    let a = core_unfolding(q_hat)?;
    let b = core_unfolding(q_tilde)?;
    let k = &numerics::pinv(&a, Some(r * r), tol.pinv_rel_tol)? * &b;
    Ok(crate::exact::strided_block(&k, r, 0, 0))
}

/// Joins `d` recovered pairs into one TR: core m becomes `s_m · Q̂_m^(α) N_m`,
/// with `s_m = det(N_m^{-1})` when `det_rescale` is set and 1 otherwise.
pub fn stitch_gauges(
    pairs: &[RecoveredPair],
    det_rescale: bool,
    tol: &ToleranceConfig,
) -> Result<(TrDecomposition, Vec<GaugeLink>)> {
    let d = pairs.len();
    let by_k: BTreeMap<usize, &RecoveredPair> = pairs.iter().map(|p| (p.k, p)).collect();
    let by_j: BTreeMap<usize, &RecoveredPair> = pairs.iter().map(|p| (p.j, p)).collect();
    if by_k.len() != d || by_j.len() != d || pairs.iter().any(|p| p.k != (p.j + 1) % d) {
        return Err(Error::InvalidArgument(
            "stitching needs one pair (m, m+1) for every site m".into(),
        ));
    }
    let mut cores = Vec::with_capacity(d);
    let mut links = Vec::with_capacity(d);
    for m in 0..d {
        let q_hat = &by_k[&m].q_hat_k;
        let q_tilde = &by_j[&m].q_tilde_j;
        let n = gauge_link(q_hat, q_tilde, tol)?;
        let ic = numerics::inverse_condition(&n)?;
        if ic < tol.pinv_rel_tol {
            return Err(Error::SingularBlock { block: m });
        }
        let scale = if det_rescale {
            C64::new(1.0, 0.0) / numerics::det(&n)?
        } else {
            C64::new(1.0, 0.0)
        };
        let slices: Vec<ComplexMatrix> = (0..q_hat.dims()[0])
            .map(|a| (&q_hat.core_slice(a) * &n).scale(scale))
            .collect();
        cores.push(ComplexDenseTensor::from_core_slices(&slices)?);
        links.push(GaugeLink {
            n,
            scale,
            inverse_condition: ic,
        });
    }
    Ok((TrDecomposition::new(cores)?, links))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MpsConfig {
    pub tol: ToleranceConfig,
    /// Probe re-draws per pair.
    pub max_attempts: usize,
    /// `Exact` coincidence grouping with nullspace bases, or k-means with raw
    /// eigenvectors for perturbed marginals.
    pub grouping: Grouping,
    pub det_rescale: bool,
    /// Rescale the result to a unit vector.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for MpsConfig {
    fn default() -> Self {
        MpsConfig {
            tol: ToleranceConfig::exact(),
            max_attempts: crate::exact::DEFAULT_MAX_ATTEMPTS,
            grouping: Grouping::Exact,
            det_rescale: true,
            normalize: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MpsReport {
    pub pairs: Vec<RecoveredPair>,
    pub links: Vec<GaugeLink>,
    /// Probe draws rejected per pair.
    pub redraws: Vec<usize>,
}

/// Seeded complex unit vector.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<C64> {
    let v: Vec<C64> = (0..n).map(|_| gaussian(rng, 1.0, Field::Complex)).collect();
    let s = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / s).collect()
}

/// Draws `(h, v)` with h uniform over the sites other than j and k.
pub fn draw_choice<R: Rng + ?Sized>(
    rng: &mut R,
    dims: &[usize],
    j: usize,
    k: usize,
) -> ProbeChoice {
    let others: Vec<usize> = (0..dims.len()).filter(|&m| m != j && m != k).collect();
    let h = others[rng.random_range(0..others.len())];
    ProbeChoice {
        h,
        v: random_unit(rng, dims[h]),
    }
}

/// Sorted marginal subset for a probe choice.
fn subset(h: usize, j: usize, k: usize) -> [usize; 3] {
    let mut s = [h, j, k];
    s.sort_unstable();
    s
}

/// Recovers all cores from 3-body marginals, up to gauge and one global scalar.
pub fn mps_recover<M: MarginalSource + ?Sized>(
    src: &M,
    r: usize,
    cfg: &MpsConfig,
) -> Result<(TrDecomposition, MpsReport)> {
    cfg.tol.validate()?;
    let dims = src.dims();
    let d = dims.len();
    if d < 3 || r < 2 {
        return Err(Error::InvalidArgument(format!(
            "MPS recovery needs d >= 3 and r >= 2, got d = {} and r = {}",
            d, r
        )));
    }
    if let Some(m) = dims.iter().position(|&n| n < r * r) {
        return Err(Error::DimensionTooSmall {
            mode: m,
            size: dims[m],
            required: r * r,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache: BTreeMap<[usize; 3], MarginalTensor> = BTreeMap::new();
    let mut pairs = Vec::with_capacity(d);
    let mut redraws = Vec::with_capacity(d);
    for k in 0..d {
        let j = (k + d - 1) % d;
        let mut last = None;
        let mut done = None;
        for attempt in 0..cfg.max_attempts.max(1) {
            let choices: Vec<ProbeChoice> =
                (0..4).map(|_| draw_choice(&mut rng, &dims, j, k)).collect();
            let mut ms = Vec::with_capacity(4);
            let mut failed = None;
            for c in &choices {
                let s = subset(c.h, j, k);
                if let btree_map::Entry::Vacant(e) = cache.entry(s) {
                    e.insert(src.marginal(s)?);
                }
                match extract_probe_matrix(&cache[&s], j, k, c.h, &c.v) {
                    Ok(m) => ms.push(m),
                    Err(e) => {
                        failed = Some(e);
                        break;
                    }
                }
            }
            let result = match failed {
                Some(e) => Err(e),
                None => {
                    let ms: [ComplexMatrix; 4] =
                        [ms[0].clone(), ms[1].clone(), ms[2].clone(), ms[3].clone()];
                    recover_pair(&ms, j, k, r, &cfg.tol, cfg.grouping)
                }
            };
            match result {
                Ok(mut p) => {
                    p.choices = choices;
                    done = Some((p, attempt));
                    break;
                }
                Err(e) if e.is_probe_failure() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        match done {
            Some((p, n)) => {
                pairs.push(p);
                redraws.push(n);
            }
            None => {
                return Err(Error::RetriesExhausted {
                    attempts: cfg.max_attempts,
                    diagnostics: vec![format!(
                        "pair ({}, {}): {}",
                        j,
                        k,
                        last.map(|e| e.to_string()).unwrap_or_default()
                    )],
                })
            }
        }
    }
    let (mut dec, links) = stitch_gauges(&pairs, cfg.det_rescale, &cfg.tol)?;
    if cfg.normalize {
        let mut s = MpsState::new(dec)?;
        s.normalize()?;
        dec = s.cores;
    }
    Ok((
        dec,
        MpsReport {
            pairs,
            links,
            redraws,
        },
    ))
}

/// Spread of the entry ratios `ψ̂/ψ` around the least-squares scalar
/// `c = ⟨ψ, ψ̂⟩ / ⟨ψ, ψ⟩`: the largest `|ψ̂_i/ψ_i − c| / |c|` over entries with
/// `|ψ_i|` at least `floor` times the root-mean-square entry.
///
/// Visits every entry when the state has at most `limit` entries, otherwise
/// `samples` seeded uniform indices.
pub fn ratio_dispersion(
    est: &TrDecomposition,
    truth: &TrDecomposition,
    floor: f64,
    limit: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let dims = truth.dims();
    if est.dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "dims {:?} vs {:?}",
            est.dims(),
            dims
        )));
    }
    let mut pairs: Vec<(C64, C64)> = Vec::new();
    if checked_numel(&dims)? <= limit {
        let mut vals = Vec::new();
        for_each_entry(truth, |_, v| vals.push(v))?;
        let mut i = 0;
        for_each_entry(est, |_, v| {
            pairs.push((v, vals[i]));
            i += 1;
        })?;
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = vec![0; dims.len()];
        for _ in 0..samples {
            for (x, &n) in idx.iter_mut().zip(&dims) {
                *x = rng.random_range(0..n);
            }
            pairs.push((tr_evaluate(est, &idx)?, tr_evaluate(truth, &idx)?));
        }
    }
    let (mut num, mut den) = (C64::new(0.0, 0.0), 0.0);
    for &(e, t) in &pairs {
        num += t.conj() * e;
        den += t.norm_sqr();
    }
    if !(den > 0.0) {
        return Err(Error::InvalidArgument("reference state vanishes".into()));
    }
    let c = num / den;
    if !(c.norm() > 0.0) {
        return Ok(f64::INFINITY);
    }
    let rms = (den / pairs.len() as f64).sqrt();
    let mut worst = 0.0f64;
    for &(e, t) in &pairs {
        if t.norm() >= floor * rms {
            worst = worst.max((e / t - c).norm() / c.norm());
        }
    }
    Ok(worst)
}
