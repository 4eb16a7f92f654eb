//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records each op as it is evaluated; [`Tape::backward`] walks
//! the record in reverse and accumulates gradients into every node that
//! requires one. Only the ops the composite models need are provided.

mod kernels;
pub mod optim;
mod tape;
mod tensor;

pub use optim::{Adam, LocalOptimizer, OptimizerKind, Sgd};
pub use tape::{Tape, Var};
pub use tensor::{Scalar, Tensor};
