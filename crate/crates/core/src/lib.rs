//! A multi-scale convolutional vision transformer for small image datasets,
//! built on a self-contained reverse-mode autodiff engine.
//!
//! ```
//! use mscvit::model::{build_model, ModelConfig, Variant};
//!
//! let cfg = ModelConfig::variant(Variant::Xs);
//! let model = build_model::<f32>(&cfg, 0)?;
//! assert_eq!(model.count_params(), mscvit::model::count_params_for(&cfg)?);
//! # Ok::<(), mscvit::Error>(())
//! ```

// Var's arithmetic returns Result, so the std operator traits do not fit.
#![allow(clippy::should_implement_trait)]
// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::wrong_self_convention, clippy::needless_range_loop, clippy::type_complexity)]

pub mod blocks;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};

// Compiles and runs the guide's snippets as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/index.md")]
    mod index {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/wavelets.md")]
    mod wavelets {}
    #[doc = include_str!("../../../book/src/blocks.md")]
    mod blocks {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
