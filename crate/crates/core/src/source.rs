//! Read access to tensor entries, with views that restrict, record or re-index reads.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use alloc::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::mask::SampleMask;
use crate::matrix::ComplexMatrix;
use crate::tensor::{check_index, linear_index, ComplexDenseTensor};
use crate::C64;

/// Anything that can hand out individual tensor entries.
///
/// The decomposition routes only ever read through this trait, so running them
/// against a [`MaskedTensorView`] proves which entries they consume.
pub trait EntrySource {
    fn dims(&self) -> &[usize];

    fn entry(&self, index: &[usize]) -> Result<C64>;

    fn order(&self) -> usize {
        self.dims().len()
    }
}

impl EntrySource for ComplexDenseTensor {
    fn dims(&self) -> &[usize] {
        ComplexDenseTensor::dims(self)
    }

    fn entry(&self, index: &[usize]) -> Result<C64> {
        self.get(index)
    }
}

impl<S: EntrySource + ?Sized> EntrySource for &S {
    fn dims(&self) -> &[usize] {
        (**self).dims()
    }

    fn entry(&self, index: &[usize]) -> Result<C64> {
        (**self).entry(index)
    }
}

/// A tensor whose reads outside `mask` fail with [`Error::MaskViolation`].
#[derive(Debug, Clone)]
pub struct MaskedTensorView<S = ComplexDenseTensor> {
    inner: S,
    mask: SampleMask,
}

impl<S: EntrySource> MaskedTensorView<S> {
    pub fn new(inner: S, mask: SampleMask) -> Result<Self> {
        if inner.dims() != mask.dims() {
            return Err(Error::ShapeMismatch(format!(
                "mask dims {:?} vs tensor dims {:?}",
                mask.dims(),
                inner.dims()
            )));
        }
        Ok(MaskedTensorView { inner, mask })
    }

    pub fn mask(&self) -> &SampleMask {
        &self.mask
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: EntrySource> EntrySource for MaskedTensorView<S> {
    fn dims(&self) -> &[usize] {
        self.inner.dims()
    }

    fn entry(&self, index: &[usize]) -> Result<C64> {
        check_index(self.dims(), index)?;
        if !self.mask.contains(index) {
            return Err(Error::MaskViolation {
                index: index.to_vec(),
            });
        }
        self.inner.entry(index)
    }
}

/// Records the linear offsets of every entry read through it.
#[derive(Debug)]
pub struct RecordingSource<S> {
    inner: S,
    reads: RefCell<BTreeSet<usize>>,
    total: RefCell<usize>,
}

impl<S: EntrySource> RecordingSource<S> {
    pub fn new(inner: S) -> Self {
        RecordingSource {
            inner,
            reads: RefCell::new(BTreeSet::new()),
            total: RefCell::new(0),
        }
    }

    /// Distinct entries read so far, as column-major offsets.
    pub fn distinct_reads(&self) -> BTreeSet<usize> {
        self.reads.borrow().clone()
    }

    pub fn distinct_count(&self) -> usize {
        self.reads.borrow().len()
    }

    pub fn total_reads(&self) -> usize {
        *self.total.borrow()
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: EntrySource> EntrySource for RecordingSource<S> {
    fn dims(&self) -> &[usize] {
        self.inner.dims()
    }

    fn entry(&self, index: &[usize]) -> Result<C64> {
        let v = self.inner.entry(index)?;
        self.reads
            .borrow_mut()
            .insert(linear_index(self.inner.dims(), index));
        *self.total.borrow_mut() += 1;
        Ok(v)
    }
}

/// The circularly shifted tensor `⟵T^k`: mode `k` (0-based) moves to the front.
#[derive(Debug, Clone)]
pub struct ShiftedView<S> {
    inner: S,
    shift: usize,
    dims: Vec<usize>,
}

impl<S: EntrySource> ShiftedView<S> {
    pub fn new(inner: S, shift: usize) -> Result<Self> {
        let d = inner.order();
        if shift >= d {
            return Err(Error::InvalidArgument(format!(
                "shift {} out of range for order {}",
                shift, d
            )));
        }
        let dims = (0..d).map(|i| inner.dims()[(i + shift) % d]).collect();
        Ok(ShiftedView { inner, shift, dims })
    }

    /// Maps an index of the shifted tensor back to the underlying tensor.
    pub fn source_index(&self, index: &[usize]) -> Vec<usize> {
        let d = self.dims.len();
        (0..d).map(|m| index[(m + d - self.shift) % d]).collect()
    }
}

impl<S: EntrySource> EntrySource for ShiftedView<S> {
    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn entry(&self, index: &[usize]) -> Result<C64> {
        check_index(&self.dims, index)?;
        self.inner.entry(&self.source_index(index))
    }
}

/// Merges the consecutive modes `start..start+len` into one super-mode whose
/// index is the column-major vectorization of the merged indices.
#[derive(Debug, Clone)]
pub struct ContractedView<S> {
    inner: S,
    start: usize,
    group: Vec<usize>,
    dims: Vec<usize>,
}

impl<S: EntrySource> ContractedView<S> {
    pub fn new(inner: S, start: usize, len: usize) -> Result<Self> {
        let d = inner.order();
        if len == 0 || start + len > d {
            return Err(Error::InvalidArgument(format!(
                "cannot contract modes {}..{} of an order-{} tensor",
                start,
                start + len,
                d
            )));
        }
        let group = inner.dims()[start..start + len].to_vec();
        let mut dims = inner.dims()[..start].to_vec();
        dims.push(group.iter().product());
        dims.extend_from_slice(&inner.dims()[start + len..]);
        Ok(ContractedView {
            inner,
            start,
            group,
            dims,
        })
    }

    pub fn group_dims(&self) -> &[usize] {
        &self.group
    }

    pub fn source_index(&self, index: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.inner.order());
        out.extend_from_slice(&index[..self.start]);
        let mut c = index[self.start];
        for n in &self.group {
            out.push(c % n);
            c /= n;
        }
        out.extend_from_slice(&index[self.start + 1..]);
        out
    }
}

impl<S: EntrySource> EntrySource for ContractedView<S> {
    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn entry(&self, index: &[usize]) -> Result<C64> {
        check_index(&self.dims, index)?;
        self.inner.entry(&self.source_index(index))
    }
}

/// `T(:, mid, Γ)`: the n_1 × |Γ| matrix of mode-1 fibers with modes 2..d−1 fixed
/// to `mid` and the last mode running over `gamma`.
pub fn slice_fix_mid<S: EntrySource + ?Sized>(
    t: &S,
    mid: &[usize],
    gamma: &[usize],
) -> Result<ComplexMatrix> {
    let dims = t.dims();
    let d = dims.len();
    if d < 3 || mid.len() != d - 2 {
        return Err(Error::InvalidArgument(format!(
            "slice_fix_mid needs order >= 3 and {} mid indices, got order {} and {}",
            d.saturating_sub(2),
            d,
            mid.len()
        )));
    }
    if gamma.len() > dims[d - 1] {
        return Err(Error::InvalidArgument(format!(
            "|Γ| = {} exceeds n_d = {}",
            gamma.len(),
            dims[d - 1]
        )));
    }
    let mut index = vec![0; d];
    index[1..d - 1].copy_from_slice(mid);
    let mut out = ComplexMatrix::zeros(dims[0], gamma.len());
    for (c, &g) in gamma.iter().enumerate() {
        index[d - 1] = g;
        for i in 0..dims[0] {
            index[0] = i;
            out[(i, c)] = t.entry(&index)?;
        }
    }
    Ok(out)
}

/// Reads every entry of a source into a dense tensor.
pub fn materialize<S: EntrySource + ?Sized>(t: &S) -> Result<ComplexDenseTensor> {
    let mut err = None;
    let out = ComplexDenseTensor::from_fn(t.dims(), |idx| match t.entry(idx) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            C64::new(0.0, 0.0)
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}
