//! Reverse-mode automatic differentiation over dense f32 tensors.
//!
//! A [`Graph`] records every operation applied to its nodes; calling
//! [`Graph::backward`] on a scalar node fills the gradients of all tracked
//! leaves. The op set is deliberately small: elementwise arithmetic and
//! activations with broadcasting, 2-D matmul, NCHW convolution, nearest
//! upsampling, average pooling, reductions, slicing and concatenation.

pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod par;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use optim::{AdamW, AdamWConfig, ParamMut, StepStats};
pub use tensor::Tensor;
