//! Gaussian draws of matrices, tensors and TR cores.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::matrix::ComplexMatrix;
use crate::tensor::ComplexDenseTensor;
use crate::tr::TrDecomposition;
use crate::C64;

/// Entry distribution for random draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Field {
    /// Real N(0, σ²) entries embedded with zero imaginary part.
    Real,
    /// Circular complex Gaussian with E|z|² = σ².
    Complex,
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64, field: Field) -> C64 {
    match field {
        Field::Real => C64::new(sigma * rng.sample::<f64, _>(StandardNormal), 0.0),
        Field::Complex => {
            let s = sigma * core::f64::consts::FRAC_1_SQRT_2;
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(s * re, s * im)
        }
    }
}

pub fn random_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    n: usize,
    sigma: f64,
    field: Field,
) -> ComplexMatrix {
    ComplexMatrix::from_fn(m, n, |_, _| gaussian(rng, sigma, field))
}

pub fn random_tensor<R: Rng + ?Sized>(
    rng: &mut R,
    dims: &[usize],
    sigma: f64,
    field: Field,
) -> Result<ComplexDenseTensor> {
    ComplexDenseTensor::from_fn(dims, |_| gaussian(rng, sigma, field))
}

/// Cores with i.i.d. entries, drawn core by core in storage order.
pub fn random_tr<R: Rng + ?Sized>(
    rng: &mut R,
    dims: &[usize],
    r: usize,
    sigma: f64,
    field: Field,
) -> Result<TrDecomposition> {
    let cores = dims
        .iter()
        .map(|&n| random_tensor(rng, &[n, r, r], sigma, field))
        .collect::<Result<Vec<_>>>()?;
    TrDecomposition::new(cores)
}

/// A uniformly random complex unit vector.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<C64> {
    let mut v: Vec<C64> = (0..n).map(|_| gaussian(rng, 1.0, Field::Complex)).collect();
    let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let nrm = num_traits::Float::sqrt(nrm);
    for z in v.iter_mut() {
        *z /= nrm;
    }
    v
}

/// Adds i.i.d. noise of standard deviation `sigma` to every entry: real when
/// the tensor is real, circular complex otherwise. Returns the field used.
pub fn add_noise<R: Rng + ?Sized>(rng: &mut R, t: &mut ComplexDenseTensor, sigma: f64) -> Field {
    let field = if t.as_slice().iter().all(|z| z.im == 0.0) {
        Field::Real
    } else {
        Field::Complex
    };
    for z in t.as_mut_slice() {
        *z += gaussian(rng, sigma, field);
    }
    field
}
