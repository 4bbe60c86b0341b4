//! The spectral probe `T(:,α,Γ) T(:,β,Γ)†` and its blockwise eigenbasis.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::kmeans::constrained_kmeans;
use crate::matrix::ComplexMatrix;
use crate::numerics::{self, normalize_vector, ToleranceConfig};
use crate::source::{slice_fix_mid, EntrySource};
use crate::C64;

/// How the r² leading eigenvalues are split into r clusters of r.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Grouping {
    /// Greedy coincidence within `cluster_rel_tol` of the spectral radius.
    Exact,
    /// Size-constrained k-means, for noisy spectra.
    KMeans { restarts: usize, seed: u64 },
}

/// Spectrum summary of one probe, kept for retry diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpectrumDiagnostics {
    pub spectral_radius: f64,
    /// Smallest distance between cluster representatives over the radius.
    pub min_gap: f64,
    /// Largest distance of a member to its representative over the radius.
    pub max_spread: f64,
    /// `|λ_{r²+1}| / |λ_1|`, zero when there is no such eigenvalue.
    pub tail_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct EigenBlockBasis {
    /// n_1 × r²; column `j·r + t` is the j-th basis vector of cluster `t`.
    pub e: ComplexMatrix,
    /// Representative eigenvalue per cluster, in lexicographic (Re, Im) order.
    pub cluster_values: Vec<C64>,
    /// Cluster of each column of `e`.
    pub block_order: Vec<usize>,
    pub diagnostics: SpectrumDiagnostics,
}

impl EigenBlockBasis {
    pub fn rank(&self) -> usize {
        self.cluster_values.len()
    }
}

/// `T(:,a,Γa) · pinv(T(:,b,Γb))`.
pub fn probe_matrix<S: EntrySource + ?Sized>(
    t: &S,
    a: &[usize],
    ga: &[usize],
    b: &[usize],
    gb: &[usize],
    pinv_rel_tol: f64,
) -> Result<ComplexMatrix> {
    let ta = slice_fix_mid(t, a, ga)?;
    let tb = slice_fix_mid(t, b, gb)?;
    Ok(&ta * &numerics::pinv(&tb, None, pinv_rel_tol)?)
}

/// Computes the probe matrix and its eigenbasis with exact grouping and
/// nullspace cluster bases.
pub fn probe_eigenbasis<S: EntrySource + ?Sized>(
    t: &S,
    a: &[usize],
    b: &[usize],
    ga: &[usize],
    gb: &[usize],
    r: usize,
    tol: &ToleranceConfig,
) -> Result<EigenBlockBasis> {
    if a == b {
        return Err(Error::InvalidArgument("probe needs a != b".into()));
    }
    if ga != gb {
        return Err(Error::InvalidArgument(
            "the probe only factors when both slices use the same column subset".into(),
        ));
    }
    let n1 = t.dims()[0];
    if n1 < r * r {
        return Err(Error::DimensionTooSmall {
            mode: 0,
            size: n1,
            required: r * r,
        });
    }
    let m = probe_matrix(t, a, ga, b, gb, tol.pinv_rel_tol)?;
    eigenbasis_of(&m, r, tol, Grouping::Exact, true)
}

/// Block eigenbasis of an n×n matrix whose nonzero spectrum is r values of multiplicity r.
///
/// With `nullspace`, cluster `t` is spanned by the r smallest right singular
/// vectors of `M − λ̄_t I`; otherwise by the eigenvectors of its members.
pub fn eigenbasis_of(
    m: &ComplexMatrix,
    r: usize,
    tol: &ToleranceConfig,
    grouping: Grouping,
    nullspace: bool,
) -> Result<EigenBlockBasis> {
    let n = m.rows();
    let rr = r * r;
    if !m.is_square() || n < rr || r == 0 {
        return Err(Error::ShapeMismatch(format!(
            "probe matrix {}x{} cannot carry r^2 = {} eigenvalues",
            m.rows(),
            m.cols(),
            rr
        )));
    }
    let eig = numerics::eig(m)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.values[j]
            .norm()
            .partial_cmp(&eig.values[i].norm())
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let top: Vec<usize> = order[..rr].to_vec();
    let radius = eig.values[top[0]].norm();
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::ClusterTolerance {
            clusters: r,
            detail: "probe spectrum is zero".into(),
        });
    }
    let tail_ratio = if n > rr {
        eig.values[order[rr]].norm() / radius
    } else {
        0.0
    };
    let values: Vec<C64> = top.iter().map(|&i| eig.values[i]).collect();

    // groups[t] lists positions into `values`; reps[t] is the representative.
    let (mut groups, mut reps) = match grouping {
        Grouping::Exact => greedy_groups(&values, r, tol.cluster_rel_tol * radius)?,
        Grouping::KMeans { restarts, seed } => {
            let a = constrained_kmeans(&values, r, restarts, seed)?;
            ((0..r).map(|k| a.members(k)).collect(), a.centers)
        }
    };

    let mut min_gap = f64::INFINITY;
    for i in 0..r {
        for j in i + 1..r {
            min_gap = min_gap.min((reps[i] - reps[j]).norm() / radius);
        }
    }
    let mut max_spread: f64 = 0.0;
    for (g, c) in groups.iter().zip(&reps) {
        for &i in g {
            max_spread = max_spread.max((values[i] - c).norm() / radius);
        }
    }
    let diagnostics = SpectrumDiagnostics {
        spectral_radius: radius,
        min_gap,
        max_spread,
        tail_ratio,
    };
    if min_gap < tol.spectral_gap_min {
        return Err(Error::ClusterTolerance {
            clusters: r,
            detail: format!(
                "cluster gap {:.3e} below {:.1e} (spread {:.3e})",
                min_gap, tol.spectral_gap_min, max_spread
            ),
        });
    }

    let mut perm: Vec<usize> = (0..r).collect();
    perm.sort_by(|&i, &j| {
        (reps[i].re, reps[i].im)
            .partial_cmp(&(reps[j].re, reps[j].im))
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    groups = perm.iter().map(|&i| groups[i].clone()).collect();
    reps = perm.iter().map(|&i| reps[i]).collect();

    let mut e = ComplexMatrix::zeros(n, rr);
    for (t, (g, rep)) in groups.iter().zip(&reps).enumerate() {
        let basis = if nullspace {
            let shifted = m - &ComplexMatrix::identity(n).scale(*rep);
            let s = numerics::svd(&shifted)?;
            s.v.block(0, n, n - r, n)
        } else {
            let cols: Vec<usize> = g.iter().map(|&i| top[i]).collect();
            eig.vectors.select_columns(&cols)
        };
        for j in 0..r {
            let mut col = basis.column(j).to_vec();
            normalize_vector(&mut col);
            e.column_mut(j * r + t).copy_from_slice(&col);
        }
    }
    let ratio = numerics::inverse_condition(&e)?;
    if ratio < tol.pinv_rel_tol {
        return Err(Error::RankDeficient {
            context: "eigenbasis E".into(),
            ratio,
        });
    }
    Ok(EigenBlockBasis {
        e,
        cluster_values: reps,
        block_order: (0..rr).map(|c| c % r).collect(),
        diagnostics,
    })
}

type Groups = (Vec<Vec<usize>>, Vec<C64>);

fn greedy_groups(values: &[C64], r: usize, radius_tol: f64) -> Result<Groups> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut seeds: Vec<C64> = Vec::new();
    for (i, v) in values.iter().enumerate() {
        match seeds.iter().position(|s| (v - s).norm() <= radius_tol) {
            Some(t) => groups[t].push(i),
            None => {
                groups.push(alloc::vec![i]);
                seeds.push(*v);
            }
        }
    }
    if groups.len() != r || groups.iter().any(|g| g.len() != r) {
        let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        return Err(Error::ClusterTolerance {
            clusters: r,
            detail: format!("greedy grouping produced sizes {:?}", sizes),
        });
    }
    let reps = groups
        .iter()
        .map(|g| g.iter().map(|&i| values[i]).sum::<C64>() / g.len() as f64)
        .collect();
    Ok((groups, reps))
}
