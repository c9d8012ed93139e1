//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records primitive applications in execution order; values are
//! held by the tape and addressed through [`Var`] handles. Parameters live
//! outside the tape and are bound as leaves for each forward pass.

mod gradcheck;
pub(crate) mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use kernels::ConvGeom;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
