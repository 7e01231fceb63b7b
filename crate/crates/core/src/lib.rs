//! Numerical core of the style-transfer benchmark suite: tensor kernels with
//! input gradients, the backbone architecture zoo, Gram-matrix losses and the
//! pixel-space optimizer, image quality metrics, analytic cost accounting, and
//! the statistics used to compare backbones.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, timing, and the
//! command line live in the `nst-bench` companion crate.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod arch;
pub mod cost;
pub mod error;
pub mod metrics;
pub mod nst;
pub mod scalar;
pub mod stats;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{FeatureMap, ImageTensor, LayerGrad, Shape};
