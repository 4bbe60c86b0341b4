//! Sample masks: the set Δ of entries a decomposition is allowed to read.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::tensor::{check_index, checked_numel, linear_index, unravel_index};

/// Which family of Δ contributed an entry (bit flags; an entry can belong to several).
pub mod provenance {
    /// `T(:, α, Γ_α) ∪ T(:, β, Γ_β)`.
    pub const PROBE_PAIR_1: u8 = 1;
    /// `T(:, α′, Γ_α′) ∪ T(:, β′, Γ_β′)`.
    pub const PROBE_PAIR_2: u8 = 2;
    /// The shifted fiber families `⟵T^k(:, ⟵γ_mid^k, Γ_k)`.
    pub const SEQUENTIAL: u8 = 4;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMask {
    dims: Vec<usize>,
    entries: BTreeMap<usize, u8>,
}

impl SampleMask {
    pub fn new(dims: &[usize]) -> Result<Self> {
        checked_numel(dims)?;
        Ok(SampleMask {
            dims: dims.to_vec(),
            entries: BTreeMap::new(),
        })
    }

    /// Every entry of the tensor, tagged with `tag`.
    pub fn full(dims: &[usize], tag: u8) -> Result<Self> {
        let n = checked_numel(dims)?;
        Ok(SampleMask {
            dims: dims.to_vec(),
            entries: (0..n).map(|i| (i, tag)).collect(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn insert(&mut self, index: &[usize], tag: u8) -> Result<()> {
        check_index(&self.dims, index)?;
        *self
            .entries
            .entry(linear_index(&self.dims, index))
            .or_insert(0) |= tag;
        Ok(())
    }

    pub fn remove(&mut self, index: &[usize]) -> bool {
        self.entries
            .remove(&linear_index(&self.dims, index))
            .is_some()
    }

    pub fn contains(&self, index: &[usize]) -> bool {
        index.len() == self.dims.len()
            && index.iter().zip(&self.dims).all(|(a, n)| a < n)
            && self.entries.contains_key(&linear_index(&self.dims, index))
    }

    pub fn contains_linear(&self, lin: usize) -> bool {
        self.entries.contains_key(&lin)
    }

    pub fn provenance(&self, index: &[usize]) -> Option<u8> {
        self.entries.get(&linear_index(&self.dims, index)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of entries carrying `tag`.
    pub fn count_with(&self, tag: u8) -> usize {
        self.entries.values().filter(|&&t| t & tag != 0).count()
    }

    /// Column-major offsets in increasing order.
    pub fn linear_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    /// Multi-indices in increasing column-major order.
    pub fn indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.entries.keys().map(move |&lin| {
            let mut idx = vec![0; self.dims.len()];
            unravel_index(&self.dims, lin, &mut idx);
            idx
        })
    }

    pub fn union_with(&mut self, other: &SampleMask) {
        debug_assert_eq!(self.dims, other.dims);
        for (&k, &t) in &other.entries {
            *self.entries.entry(k).or_insert(0) |= t;
        }
    }
}
