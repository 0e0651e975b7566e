//! A small reverse-mode automatic differentiation tape over `ndarray`.
//!
//! Ops are methods on [`Graph`]; each records its output value and a
//! backward closure. Tensors are channel-last: images and feature maps are
//! `(H, W, C)`, token sets are `(N, C)`.

mod conv;
mod graph;
mod loss;
mod norm;
mod ops;

pub mod gradcheck;

pub use conv::{flatten_hw, ConvGeom};
pub use graph::{BackCtx, Grads, Graph, Var};
pub use loss::softmax;
pub use ops::{log_softmax_last, sigmoid, softmax_last};
