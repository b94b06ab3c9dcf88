//! Federated learning with hybrid batch normalization.
//!
//! This crate is `no_std` (it needs `alloc`) and holds everything that is pure
//! computation: tensors and layers with hand-written backward passes, the
//! normalization layers, the client/server protocol, and the seeded data
//! generators. File formats, the CLI and threading live in the `fedhbn` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod federation;
pub mod nn;
pub mod norm;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
