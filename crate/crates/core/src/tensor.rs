use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::C64;
#[allow(unused_imports)]
use num_traits::Float;

/// Order-d complex tensor, column-major (the first index varies fastest).
///
/// All mode indices in this crate are 0-based; the text-facing formats
/// (probe JSON, CLI flags) convert at their boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexDenseTensor {
    dims: Vec<usize>,
    data: Vec<C64>,
}

/// Number of entries described by `dims`, or an error on overflow.
pub fn checked_numel(dims: &[usize]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &n| {
        acc.checked_mul(n)
            .ok_or_else(|| Error::InvalidArgument(format!("dims {:?} overflow usize", dims)))
    })
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument(
            "tensor order must be at least 1".into(),
        ));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "zero-sized mode in {:?}",
            dims
        )));
    }
    checked_numel(dims).map(|_| ())
}

/// Column-major linear offset of a multi-index (no bounds check).
#[inline]
pub fn linear_index(dims: &[usize], index: &[usize]) -> usize {
    let mut lin = 0;
    let mut stride = 1;
    for (a, n) in index.iter().zip(dims) {
        lin += a * stride;
        stride *= n;
    }
    lin
}

/// Inverse of [`linear_index`].
pub fn unravel_index(dims: &[usize], mut lin: usize, out: &mut [usize]) {
    for (o, n) in out.iter_mut().zip(dims) {
        *o = lin % n;
        lin /= n;
    }
}

pub fn check_index(dims: &[usize], index: &[usize]) -> Result<()> {
    if index.len() != dims.len() || index.iter().zip(dims).any(|(a, n)| a >= n) {
        return Err(Error::IndexOutOfRange {
            index: index.to_vec(),
            dims: dims.to_vec(),
        });
    }
    Ok(())
}

/// Advances a column-major odometer; returns false after the last index.
#[inline]
pub fn next_index(dims: &[usize], index: &mut [usize]) -> bool {
    for (a, n) in index.iter_mut().zip(dims) {
        *a += 1;
        if *a < *n {
            return true;
        }
        *a = 0;
    }
    false
}

impl ComplexDenseTensor {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        Ok(ComplexDenseTensor {
            dims: dims.to_vec(),
            data: vec![C64::new(0.0, 0.0); checked_numel(dims)?],
        })
    }

    pub fn from_data(dims: &[usize], data: Vec<C64>) -> Result<Self> {
        validate_dims(dims)?;
        let n = checked_numel(dims)?;
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} values for dims {:?} ({} entries)",
                data.len(),
                dims,
                n
            )));
        }
        Ok(ComplexDenseTensor {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Fills every entry from `f(index)`, visiting indices in storage order.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> C64) -> Result<Self> {
        validate_dims(dims)?;
        let n = checked_numel(dims)?;
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0; dims.len()];
        loop {
            data.push(f(&idx));
            if !next_index(dims, &mut idx) {
                break;
            }
        }
        Ok(ComplexDenseTensor {
            dims: dims.to_vec(),
            data,
        })
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> Result<C64> {
        check_index(&self.dims, index)?;
        Ok(self.data[linear_index(&self.dims, index)])
    }

    #[inline]
    pub fn at(&self, index: &[usize]) -> C64 {
        self.data[linear_index(&self.dims, index)]
    }

    pub fn set(&mut self, index: &[usize], value: C64) -> Result<()> {
        check_index(&self.dims, index)?;
        let lin = linear_index(&self.dims, index);
        self.data[lin] = value;
        Ok(())
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Relative Frobenius distance `‖self − other‖ / ‖other‖`.
    pub fn rel_diff(&self, other: &ComplexDenseTensor) -> f64 {
        let diff = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let base = other.norm_fro();
        if base == 0.0 {
            diff
        } else {
            diff / base
        }
    }

    fn check_mode(&self, k: usize) -> Result<()> {
        if k >= self.order() {
            return Err(Error::InvalidArgument(format!(
                "mode {} out of range for an order-{} tensor",
                k,
                self.order()
            )));
        }
        Ok(())
    }

    /// Mode-k slice of a core-shaped tensor `(n, r, r)`: the r×r matrix `Q^(α)`.
    pub fn core_slice(&self, alpha: usize) -> ComplexMatrix {
        debug_assert_eq!(self.order(), 3);
        let (n, r1, r2) = (self.dims[0], self.dims[1], self.dims[2]);
        ComplexMatrix::from_fn(r1, r2, |a, b| self.data[alpha + n * (a + r1 * b)])
    }

    /// Inverse of [`core_slice`](Self::core_slice) over all α.
    pub fn from_core_slices(slices: &[ComplexMatrix]) -> Result<Self> {
        let n = slices.len();
        let (r1, r2) = slices
            .first()
            .map(|s| s.shape())
            .ok_or_else(|| Error::InvalidArgument("no slices".into()))?;
        let mut t = Self::zeros(&[n, r1, r2])?;
        for (alpha, s) in slices.iter().enumerate() {
            if s.shape() != (r1, r2) {
                return Err(Error::ShapeMismatch("ragged core slices".into()));
            }
            for b in 0..r2 {
                for a in 0..r1 {
                    t.data[alpha + n * (a + r1 * b)] = s[(a, b)];
                }
            }
        }
        Ok(t)
    }

    /// `T_[k]`: row α_k, column `overline(α_{k+1}…α_d α_1…α_{k−1})`.
    pub fn matricize_bracket(&self, k: usize) -> Result<ComplexMatrix> {
        self.check_mode(k)?;
        let shifted = self.circular_shift(k)?;
        let n = self.dims[k];
        ComplexMatrix::from_col_major(n, self.numel() / n, shifted.data)
    }

    /// `T_⟨k⟩`: row α_k, column `overline(α_{k−1}…α_1 α_d…α_{k+1})`.
    pub fn matricize_angle(&self, k: usize) -> Result<ComplexMatrix> {
        self.check_mode(k)?;
        let n = self.dims[k];
        let cols = self.numel() / n;
        let order = angle_order(self.order(), k);
        let mut out = ComplexMatrix::zeros(n, cols);
        let mut idx = vec![0; self.order()];
        for v in &self.data {
            out[(idx[k], column_of(&self.dims, &idx, &order))] = *v;
            next_index(&self.dims, &mut idx);
        }
        Ok(out)
    }

    /// `⟵T^k`: dims `(n_{k+1},…,n_d,n_1,…,n_k)` (1-based), i.e. 0-based mode `k` moves to the front.
    pub fn circular_shift(&self, k: usize) -> Result<Self> {
        let d = self.order();
        if k >= d {
            return Err(Error::InvalidArgument(format!(
                "shift {} out of range for order {}",
                k, d
            )));
        }
        if k == 0 {
            return Ok(self.clone());
        }
        let new_dims: Vec<usize> = (0..d).map(|i| self.dims[(i + k) % d]).collect();
        let mut idx = vec![0; d];
        let mut data = Vec::with_capacity(self.numel());
        loop {
            let src: Vec<usize> = (0..d).map(|m| idx[(m + d - k) % d]).collect();
            data.push(self.at(&src));
            if !next_index(&new_dims, &mut idx) {
                break;
            }
        }
        Self::from_data(&new_dims, data)
    }

    /// `Y = T ×_k U`, i.e. `Y_[k] = U · T_[k]`.
    pub fn mode_k_product(&self, u: &ComplexMatrix, k: usize) -> Result<Self> {
        self.check_mode(k)?;
        if u.cols() != self.dims[k] {
            return Err(Error::ShapeMismatch(format!(
                "mode-{} product needs {} columns, got {}",
                k,
                self.dims[k],
                u.cols()
            )));
        }
        let y = u.matmul(&self.matricize_bracket(k)?)?;
        let mut dims = self.dims.clone();
        dims[k] = u.rows();
        reshape_from_bracket(&y, &dims, k)
    }
}

/// Mode order (fastest first) of the angle-matricization columns.
fn angle_order(d: usize, k: usize) -> Vec<usize> {
    (1..d).map(|s| (k + d - s) % d).collect()
}

fn column_of(dims: &[usize], idx: &[usize], order: &[usize]) -> usize {
    let mut col = 0;
    let mut stride = 1;
    for &m in order {
        col += idx[m] * stride;
        stride *= dims[m];
    }
    col
}

fn check_unfolding(a: &ComplexMatrix, dims: &[usize], k: usize) -> Result<()> {
    validate_dims(dims)?;
    if k >= dims.len() {
        return Err(Error::InvalidArgument(format!("mode {} out of range", k)));
    }
    let n = checked_numel(dims)?;
    if a.rows() != dims[k] || a.rows() * a.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} matrix is not a mode-{} unfolding of {:?}",
            a.rows(),
            a.cols(),
            k,
            dims
        )));
    }
    Ok(())
}

/// Inverse of [`ComplexDenseTensor::matricize_bracket`].
pub fn reshape_from_bracket(
    a: &ComplexMatrix,
    dims: &[usize],
    k: usize,
) -> Result<ComplexDenseTensor> {
    check_unfolding(a, dims, k)?;
    let d = dims.len();
    let shifted_dims: Vec<usize> = (0..d).map(|i| dims[(i + k) % d]).collect();
    let shifted = ComplexDenseTensor::from_data(&shifted_dims, a.as_slice().to_vec())?;
    if k == 0 {
        return Ok(shifted);
    }
    shifted.circular_shift(d - k)
}

/// Inverse of [`ComplexDenseTensor::matricize_angle`].
pub fn reshape_from_angle(
    a: &ComplexMatrix,
    dims: &[usize],
    k: usize,
) -> Result<ComplexDenseTensor> {
    check_unfolding(a, dims, k)?;
    let order = angle_order(dims.len(), k);
    ComplexDenseTensor::from_fn(dims, |idx| a[(idx[k], column_of(dims, idx, &order))])
}
