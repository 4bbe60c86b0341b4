//! Probe index choices (α, β, α′, β′, γ, Γ_•) and the sample mask they induce.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mask::{provenance, SampleMask};

/// Index tuples for the two spectral probes and the sequential recovery.
///
/// All indices are 0-based. `alpha`..`beta_p` index the middle modes
/// `1..d−1`; `gamma` is a full d-tuple. The two members of a probe pair share
/// one column subset of the last mode, since the probe only factors when
/// `Γ_α = Γ_β`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeConfig {
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
    pub alpha_p: Vec<usize>,
    pub beta_p: Vec<usize>,
    /// Γ_α = Γ_β, a subset of the last mode.
    pub gamma_pair: Vec<usize>,
    /// Γ_α′ = Γ_β′.
    pub gamma_pair_p: Vec<usize>,
    pub gamma: Vec<usize>,
    /// `gamma_modes[k]` is Γ_k, a subset of mode k used by the family that
    /// fixes mode k and frees mode k+1 (cyclically).
    pub gamma_modes: Vec<Vec<usize>>,
}

/// Number of columns a Γ of mode size `n` carries.
pub fn gamma_size(n: usize, r: usize) -> usize {
    n.min(r * r)
}

impl ProbeConfig {
    /// Deterministic choice: α = 0, β differs in the first mid coordinate of size ≥ 2,
    /// α′ = α, β′ differs in the next such coordinate (or takes the next value).
    pub fn default_for(dims: &[usize], r: usize) -> Result<Self> {
        check_shape(dims, r)?;
        let d = dims.len();
        let mid = &dims[1..d - 1];
        let free: Vec<usize> = (0..mid.len()).filter(|&i| mid[i] >= 2).collect();
        let Some(&c0) = free.first() else {
            return Err(no_free_mid(dims));
        };
        let alpha = vec![0; d - 2];
        let mut beta = alpha.clone();
        beta[c0] = 1;
        let alpha_p = alpha.clone();
        let mut beta_p = alpha.clone();
        match free.get(1) {
            Some(&c1) => beta_p[c1] = 1,
            None if mid[c0] >= 3 => beta_p[c0] = 2,
            None => {
                return Err(Error::InvalidArgument(format!(
                    "middle modes of {:?} allow only one pair {{alpha, beta}}",
                    dims
                )))
            }
        }
        Self::assemble(dims, r, alpha, beta, alpha_p, beta_p)
    }

    fn assemble(
        dims: &[usize],
        r: usize,
        alpha: Vec<usize>,
        beta: Vec<usize>,
        alpha_p: Vec<usize>,
        beta_p: Vec<usize>,
    ) -> Result<Self> {
        let d = dims.len();
        let g: Vec<usize> = (0..r * r).collect();
        let p = ProbeConfig {
            alpha,
            beta,
            alpha_p,
            beta_p,
            gamma_pair: g.clone(),
            gamma_pair_p: g,
            gamma: vec![0; d],
            gamma_modes: dims
                .iter()
                .map(|&n| (0..gamma_size(n, r)).collect())
                .collect(),
        };
        p.validate(dims, r)?;
        Ok(p)
    }

    /// Uniform α, β differing from α in one uniformly chosen coordinate,
    /// likewise for the primed pair; default γ and Γ.
    pub fn draw<R: Rng + ?Sized>(dims: &[usize], r: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::default_for(dims, r)?;
        p.redraw_pair(dims, rng, false)?;
        p.redraw_pair(dims, rng, true)?;
        Ok(p)
    }

    /// Re-draws (α, β) or, with `primed`, (α′, β′), with β differing from α in one middle mode.
    pub fn redraw_pair<R: Rng + ?Sized>(
        &mut self,
        dims: &[usize],
        rng: &mut R,
        primed: bool,
    ) -> Result<()> {
        let d = dims.len();
        let mid = &dims[1..d - 1];
        let free: Vec<usize> = (0..mid.len()).filter(|&i| mid[i] >= 2).collect();
        if free.is_empty() {
            return Err(no_free_mid(dims));
        }
        for _ in 0..256 {
            let a: Vec<usize> = mid.iter().map(|&n| rng.random_range(0..n)).collect();
            let c = free[rng.random_range(0..free.len())];
            let mut b = a.clone();
            b[c] = (a[c] + rng.random_range(1..mid[c])) % mid[c];
            let (other_a, other_b) = if primed {
                (&self.alpha, &self.beta)
            } else {
                (&self.alpha_p, &self.beta_p)
            };
            let same = (&a == other_a && &b == other_b) || (&a == other_b && &b == other_a);
            if !same {
                if primed {
                    self.alpha_p = a;
                    self.beta_p = b;
                } else {
                    self.alpha = a;
                    self.beta = b;
                }
                return Ok(());
            }
        }
        Err(Error::InvalidArgument(format!(
            "cannot find a probe pair distinct from the other pair for dims {:?}",
            dims
        )))
    }

    /// Re-draws γ and every Γ_k uniformly.
    pub fn redraw_sequential<R: Rng + ?Sized>(&mut self, dims: &[usize], r: usize, rng: &mut R) {
        self.gamma = dims.iter().map(|&n| rng.random_range(0..n)).collect();
        self.gamma_modes = dims
            .iter()
            .map(|&n| sample(rng, n, gamma_size(n, r)).into_vec())
            .collect();
    }

    /// Re-draws the shared column subsets of both probe pairs.
    pub fn redraw_probe_columns<R: Rng + ?Sized>(&mut self, dims: &[usize], r: usize, rng: &mut R) {
        let n = dims[dims.len() - 1];
        self.gamma_pair = sample(rng, n, r * r).into_vec();
        self.gamma_pair_p = sample(rng, n, r * r).into_vec();
    }

    pub fn validate(&self, dims: &[usize], r: usize) -> Result<()> {
        check_shape(dims, r)?;
        let d = dims.len();
        let mid = &dims[1..d - 1];
        for (name, t) in [
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("alpha_p", &self.alpha_p),
            ("beta_p", &self.beta_p),
        ] {
            if t.len() != d - 2 || t.iter().zip(mid).any(|(a, n)| a >= n) {
                return Err(Error::InvalidArgument(format!(
                    "{} = {:?} is not a middle index of dims {:?}",
                    name, t, dims
                )));
            }
        }
        if self.alpha == self.beta || self.alpha_p == self.beta_p {
            return Err(Error::InvalidArgument(
                "probe pair needs alpha != beta and alpha_p != beta_p".into(),
            ));
        }
        let pair = |a: &Vec<usize>, b: &Vec<usize>| {
            if a <= b {
                (a.clone(), b.clone())
            } else {
                (b.clone(), a.clone())
            }
        };
        if pair(&self.alpha, &self.beta) == pair(&self.alpha_p, &self.beta_p) {
            return Err(Error::InvalidArgument(
                "{alpha, beta} and {alpha_p, beta_p} must differ".into(),
            ));
        }
        if self.gamma.len() != d || self.gamma.iter().zip(dims).any(|(a, n)| a >= n) {
            return Err(Error::InvalidArgument(format!(
                "gamma = {:?} out of range for dims {:?}",
                self.gamma, dims
            )));
        }
        let last = dims[d - 1];
        check_subset("gamma_pair", &self.gamma_pair, last, r * r)?;
        check_subset("gamma_pair_p", &self.gamma_pair_p, last, r * r)?;
        if self.gamma_modes.len() != d {
            return Err(Error::InvalidArgument(format!(
                "{} column subsets for order {}",
                self.gamma_modes.len(),
                d
            )));
        }
        for (k, g) in self.gamma_modes.iter().enumerate() {
            check_subset("gamma_modes", g, dims[k], gamma_size(dims[k], r))?;
        }
        Ok(())
    }
}

fn no_free_mid(dims: &[usize]) -> Error {
    Error::InvalidArgument(format!(
        "every middle mode of {:?} has size 1; alpha != beta is impossible",
        dims
    ))
}

fn check_shape(dims: &[usize], r: usize) -> Result<()> {
    let d = dims.len();
    if d < 3 {
        return Err(Error::InvalidArgument(format!(
            "probes need order >= 3, got {}",
            d
        )));
    }
    if r < 2 {
        return Err(Error::InvalidArgument(format!(
            "TR-rank r = {} must be >= 2",
            r
        )));
    }
    for k in [0, d - 1] {
        if dims[k] < r * r {
            return Err(Error::DimensionTooSmall {
                mode: k,
                size: dims[k],
                required: r * r,
            });
        }
    }
    Ok(())
}

fn check_subset(name: &str, g: &[usize], n: usize, size: usize) -> Result<()> {
    let mut s = g.to_vec();
    s.sort_unstable();
    s.dedup();
    if g.len() != size || s.len() != size || s.last().is_some_and(|&x| x >= n) {
        return Err(Error::InvalidArgument(format!(
            "{} = {:?} must hold {} distinct indices below {}",
            name, g, size, n
        )));
    }
    Ok(())
}

/// How many γ_1 variants the family fixing mode `k` stacks so that its
/// columns reach r² (only modes smaller than r² need more than one).
pub fn stack_count(dims: &[usize], r: usize, k: usize) -> usize {
    let g = gamma_size(dims[k], r);
    if g >= r * r || k == 0 {
        1
    } else {
        (r * r).div_ceil(g).saturating_add(1).min(dims[0])
    }
}

/// Full indices of the sequential family that frees mode `(k+1) mod d`, runs
/// mode `k` over Γ_k and fixes every other mode to γ, for each stacked γ variant.
/// Returned in the order `[variant][column of Γ_k][free index]`.
pub fn sequential_family(
    dims: &[usize],
    r: usize,
    probes: &ProbeConfig,
    k: usize,
) -> Vec<Vec<Vec<Vec<usize>>>> {
    let d = dims.len();
    let free = (k + 1) % d;
    (0..stack_count(dims, r, k))
        .map(|v| {
            let mut base = probes.gamma.clone();
            base[0] = (base[0] + v) % dims[0];
            probes.gamma_modes[k]
                .iter()
                .map(|&g| {
                    (0..dims[free])
                        .map(|l| {
                            let mut idx = base.clone();
                            idx[k] = g;
                            idx[free] = l;
                            idx
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn insert_probe(
    mask: &mut SampleMask,
    dims: &[usize],
    mid: &[usize],
    gamma: &[usize],
    tag: u8,
) -> Result<()> {
    let d = dims.len();
    let mut idx = vec![0; d];
    idx[1..d - 1].copy_from_slice(mid);
    for &g in gamma {
        idx[d - 1] = g;
        for i in 0..dims[0] {
            idx[0] = i;
            mask.insert(&idx, tag)?;
        }
    }
    Ok(())
}

fn insert_probes(mask: &mut SampleMask, dims: &[usize], probes: &ProbeConfig) -> Result<()> {
    insert_probe(
        mask,
        dims,
        &probes.alpha,
        &probes.gamma_pair,
        provenance::PROBE_PAIR_1,
    )?;
    insert_probe(
        mask,
        dims,
        &probes.beta,
        &probes.gamma_pair,
        provenance::PROBE_PAIR_1,
    )?;
    insert_probe(
        mask,
        dims,
        &probes.alpha_p,
        &probes.gamma_pair_p,
        provenance::PROBE_PAIR_2,
    )?;
    insert_probe(
        mask,
        dims,
        &probes.beta_p,
        &probes.gamma_pair_p,
        provenance::PROBE_PAIR_2,
    )
}

fn insert_family(
    mask: &mut SampleMask,
    dims: &[usize],
    r: usize,
    probes: &ProbeConfig,
    k: usize,
) -> Result<()> {
    for variant in sequential_family(dims, r, probes, k) {
        for col in variant {
            for idx in col {
                mask.insert(&idx, provenance::SEQUENTIAL)?;
            }
        }
    }
    Ok(())
}

/// The observation set Δ: both probe pairs plus the d shifted fiber families.
pub fn build_sample_mask(dims: &[usize], r: usize, probes: &ProbeConfig) -> Result<SampleMask> {
    probes.validate(dims, r)?;
    let mut mask = SampleMask::new(dims)?;
    insert_probes(&mut mask, dims, probes)?;
    for k in 0..dims.len() {
        insert_family(&mut mask, dims, r, probes, k)?;
    }
    Ok(mask)
}

/// Δ for a cyclically symmetric tensor: the probes plus the single family
/// freeing mode 1 and running mode d over Γ_d, read at a constant γ.
pub fn build_symmetric_mask(dims: &[usize], r: usize, probes: &ProbeConfig) -> Result<SampleMask> {
    probes.validate(dims, r)?;
    let mut mask = SampleMask::new(dims)?;
    insert_probes(&mut mask, dims, probes)?;
    insert_family(&mut mask, dims, r, probes, dims.len() - 1)?;
    Ok(mask)
}
