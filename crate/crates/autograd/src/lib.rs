//! Small tape-based automatic differentiation for CPU convnets.
//!
//! Gradients are themselves graph values, so second derivatives (needed by
//! gradient-penalty critics) come for free. Tensors are generic over
//! [`Float`] so the same code runs in `f32` for training and in `f64` for
//! finite-difference checks.

pub mod check;
mod conv;
mod float;
mod graph;
mod tensor;

pub use conv::{conv2d, conv2d_input_grad, conv2d_weight_grad, Conv2dSpec};
pub use float::Float;
pub use graph::{Graph, Var};
pub use tensor::Tensor;
