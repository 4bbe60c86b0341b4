#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod exact;
pub mod kmeans;
pub mod mask;
pub mod matrix;
pub mod mps;
pub mod numerics;
pub mod random;
pub mod robust;
pub mod source;
pub mod symmetric;
pub mod tensor;
pub mod tr;

pub use num_complex::Complex64 as C64;
