//! Dense arrays and tape-based reverse-mode differentiation.

mod array;
pub mod cost;
mod graph;
pub mod gradcheck;
pub mod ops;
mod param;
mod scalar;

pub use array::Tensor;
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use param::{Param, ParamId};
pub use scalar::{num_like, DType, Scalar};
pub use ops::BnStats;
