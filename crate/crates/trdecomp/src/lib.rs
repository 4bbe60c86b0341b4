//! File formats, the experiment harness and the `trdecomp` command line,
//! on top of the `no_std` algorithms in `trdecomp-core`.

pub use trdecomp_core as core;

pub mod cli;
pub mod format;
pub mod harness;
