//! Minimal differentiable building blocks for small CPU models.
//!
//! Networks are sequential stacks of [`LayerSpec`]s. A training-mode
//! [`Network::forward`] caches activations, [`Network::backward`] accumulates
//! parameter gradients, and [`Adam`] applies them. All layer code is generic
//! over [`Real`] so gradient checks can run the same kernels in `f64`.

mod error;
mod im2col;
mod layer;
mod network;
mod real;
mod tensor;

pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
pub mod optim;

pub use checkpoint::Checkpoint;
pub use error::{NnError, Result};
pub use layer::{LayerSpec, Param};
pub use network::Network;
pub use optim::{ema_update, Adam, AdamConfig};
pub use real::{gemm, MatRef, Real};
pub use tensor::Tensor;
