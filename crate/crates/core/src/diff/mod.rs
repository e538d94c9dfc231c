//! Minimal f64 reverse-mode autodiff.
//!
//! Training and inference share one set of arithmetic kernels so that the
//! compressor and decompressor reproduce probabilities bit-for-bit: the
//! [`Tape`] builds on the same [`Tensor`] routines the plain inference paths
//! call directly. Every operation carries an analytic backward pass that the
//! gradient checker verifies against central finite differences.

mod adam;
mod check;
mod gcc;
mod tape;
pub(crate) mod tensor;

pub use adam::{Adam, Param};
pub use check::grad_check;
pub use gcc::{causal_mask, gcc_norm, relation_masks};
pub use tape::{CustomGrad, Tape, Var};
pub use tensor::Tensor;
