use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the decomposition pipeline and its building blocks.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("index {index:?} out of range for dims {dims:?}")]
    IndexOutOfRange { index: Vec<usize>, dims: Vec<usize> },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("read of entry {index:?} outside the sample mask")]
    MaskViolation { index: Vec<usize> },

    #[error("{entries} entries exceed the memory bound of {limit}")]
    MemoryBound { entries: usize, limit: usize },

    #[error("mode {mode} has size {size} < r^2 = {required}; use the refined (contracted) route")]
    DimensionTooSmall {
        mode: usize,
        size: usize,
        required: usize,
    },

    #[error("eigenvalues do not form {clusters} clusters of {clusters}: {detail}")]
    ClusterTolerance { clusters: usize, detail: String },

    #[error("rank deficient {context}: sigma_min/sigma_max = {ratio:e}")]
    RankDeficient { context: String, ratio: f64 },

    #[error("gauge block {block} is singular")]
    SingularBlock { block: usize },

    #[error("probe retries exhausted after {attempts} attempts: {}", diagnostics.join("; "))]
    RetriesExhausted {
        attempts: usize,
        diagnostics: Vec<String>,
    },

    #[error("no cyclic run of two modes with n_k >= r^2")]
    NoValidStart,

    #[error("no d-th root branch verifies (best residual {best_residual:e})")]
    NoRootMatches { best_residual: f64 },

    #[error("eigenvector matrix is ill-conditioned (condition {condition:e})")]
    SingularEigvec { condition: f64 },

    #[error("tensor has rank above r^2 = {bound} (residual {residual:e})")]
    RankExceeded { bound: usize, residual: f64 },

    #[error("{0} did not converge")]
    NoConvergence(String),

    #[error("probe scaling factor vanished; redraw v")]
    ZeroProbe,
}

impl Error {
    /// True for failures that a fresh draw of probes may cure.
    pub fn is_probe_failure(&self) -> bool {
        matches!(
            self,
            Error::ClusterTolerance { .. }
                | Error::RankDeficient { .. }
                | Error::SingularBlock { .. }
                | Error::NoConvergence(_)
                | Error::ZeroProbe
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
