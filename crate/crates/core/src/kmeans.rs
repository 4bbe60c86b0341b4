//! Balanced (size-constrained) k-means on points of the complex plane.
//!
//! r² points are split into r clusters of exactly r members. Each Lloyd step
//! solves the capacity-constrained assignment exactly as a min-cost matching
//! of points to r·r cluster slots.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::C64;

const MAX_LLOYD_ITERS: usize = 100;
/// Up to this r every balanced partition is enumerated (280 of them at r = 3).
pub const ENUMERATION_MAX_R: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub points: Vec<C64>,
    /// Cluster label of each point; every label occurs exactly `r` times.
    pub labels: Vec<usize>,
    pub centers: Vec<C64>,
    /// `Σ_j |x_j − c_{z_j}|²`.
    pub objective: f64,
}

impl ClusterAssignment {
    /// Members of cluster `k`, in point order.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&j| self.labels[j] == k)
            .collect()
    }
}

/// Objective of a labelling when every center is its cluster mean.
pub fn objective_of(points: &[C64], labels: &[usize], r: usize) -> f64 {
    let centers = means(points, labels, r);
    points
        .iter()
        .zip(labels)
        .map(|(x, &k)| (x - centers[k]).norm_sqr())
        .sum()
}

fn means(points: &[C64], labels: &[usize], r: usize) -> Vec<C64> {
    let mut sum = vec![C64::new(0.0, 0.0); r];
    let mut count = vec![0usize; r];
    for (x, &k) in points.iter().zip(labels) {
        sum[k] += x;
        count[k] += 1;
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { *s } else { s / c as f64 })
        .collect()
}

/// Exact optimum by enumeration for `r <= ENUMERATION_MAX_R`, otherwise the
/// best of `restarts` seeded Lloyd runs with exact balanced assignment steps.
pub fn constrained_kmeans(
    values: &[C64],
    r: usize,
    restarts: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    if r == 0 || values.len() != r * r {
        return Err(Error::InvalidArgument(format!(
            "constrained k-means needs r^2 = {} points, got {}",
            r * r,
            values.len()
        )));
    }
    if values
        .iter()
        .any(|z| !(z.re.is_finite() && z.im.is_finite()))
    {
        return Err(Error::InvalidArgument("non-finite point".into()));
    }
    if r <= ENUMERATION_MAX_R {
        return Ok(enumerate_balanced(values, r));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut best: Option<ClusterAssignment> = None;
    for _ in 0..restarts.max(1) {
        let init: Vec<C64> = sample(&mut rng, n, r).iter().map(|i| values[i]).collect();
        let run = lloyd(values, r, init);
        if best.as_ref().map_or(true, |b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn enumerate_balanced(points: &[C64], r: usize) -> ClusterAssignment {
    // Canonical labellings: label k appears only after labels 0..k have.
    fn go(
        points: &[C64],
        r: usize,
        labels: &mut Vec<usize>,
        counts: &mut [usize],
        best: &mut (f64, Vec<usize>),
    ) {
        if labels.len() == points.len() {
            let obj = objective_of(points, labels, r);
            if obj < best.0 {
                *best = (obj, labels.clone());
            }
            return;
        }
        let used = counts.iter().filter(|&&c| c > 0).count();
        for k in 0..(used + 1).min(r) {
            if counts[k] < r {
                counts[k] += 1;
                labels.push(k);
                go(points, r, labels, counts, best);
                labels.pop();
                counts[k] -= 1;
            }
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    go(
        points,
        r,
        &mut Vec::with_capacity(points.len()),
        &mut vec![0; r],
        &mut best,
    );
    let (objective, labels) = best;
    ClusterAssignment {
        points: points.to_vec(),
        centers: means(points, &labels, r),
        labels,
        objective,
    }
}

fn lloyd(points: &[C64], r: usize, mut centers: Vec<C64>) -> ClusterAssignment {
    let mut labels = balanced_assignment(points, &centers, r);
    for _ in 0..MAX_LLOYD_ITERS {
        centers = means(points, &labels, r);
        let next = balanced_assignment(points, &centers, r);
        if next == labels {
            break;
        }
        labels = next;
    }
    centers = means(points, &labels, r);
    let objective = points
        .iter()
        .zip(&labels)
        .map(|(x, &k)| (x - centers[k]).norm_sqr())
        .sum();
    ClusterAssignment {
        points: points.to_vec(),
        labels,
        centers,
        objective,
    }
}

/// Minimum-cost assignment of points to centers with `capacity` points per center.
pub fn balanced_assignment(points: &[C64], centers: &[C64], capacity: usize) -> Vec<usize> {
    let n = points.len();
    debug_assert_eq!(n, centers.len() * capacity);
    // Slot s belongs to center s / capacity.
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |s| (i, s)))
        .map(|(i, s)| (points[i] - centers[s / capacity]).norm_sqr())
        .collect();
    hungarian(&cost, n)
        .into_iter()
        .map(|s| s / capacity)
        .collect()
}

/// Square assignment problem: returns `col[i]` minimizing `Σ cost[i·n + col[i]]`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // Potentials formulation with 1-based sentinels.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            col[p[j] - 1] = j - 1;
        }
    }
    col
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[f64]) -> Vec<C64> {
        xs.iter().map(|&x| C64::new(x, 0.0)).collect()
    }

    #[test]
    fn separated_duplicates() {
        let a = constrained_kmeans(&pts(&[0.0, 10.0, 0.0, 10.0]), 2, 10, 1).unwrap();
        assert_eq!(a.objective, 0.0);
        assert_eq!(a.labels[0], a.labels[2]);
        assert_eq!(a.labels[1], a.labels[3]);
        assert_ne!(a.labels[0], a.labels[1]);
    }

    #[test]
    fn collinear_points() {
        let a = constrained_kmeans(&pts(&[0.0, 1.0, 2.0, 3.0]), 2, 10, 2).unwrap();
        assert!((a.objective - 1.0).abs() < 1e-15);
        assert_eq!(a.labels[0], a.labels[1]);
        assert_eq!(a.labels[2], a.labels[3]);
    }

    #[test]
    fn hungarian_small() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let col = hungarian(&cost, 3);
        let total: f64 = (0..3).map(|i| cost[i * 3 + col[i]]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn rejects_wrong_point_count() {
        assert!(constrained_kmeans(&pts(&[0.0, 1.0, 2.0]), 2, 1, 0).is_err());
    }
}
