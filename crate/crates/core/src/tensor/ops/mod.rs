//! Differentiable primitives, exposed as methods on [`Var`](super::Var).
//!
//! Every op validates shapes, computes its forward value eagerly and records
//! a backward closure on the graph.

mod attention;
mod conv;
mod elementwise;
mod linear;
mod loss;
mod norm;
mod shape;

pub use norm::BnStats;

use super::Scalar;

/// `(outer, len, inner)` split of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[inline]
pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v)
}
