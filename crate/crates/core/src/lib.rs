//! StNet: super-image 2D backbones with temporal modeling blocks and a
//! temporal Xception head, built on a small reverse-mode autodiff core.

pub(crate) mod binio;
pub mod cli;
pub mod complexity;
pub mod data;
pub mod error;
pub mod graph;
pub mod kv;
pub mod ops;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Gradients, Tape, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
