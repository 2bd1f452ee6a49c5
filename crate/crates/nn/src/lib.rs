//! Minimal differentiable building blocks with hand-written backward passes: 2D
//! convolution, residual blocks, linear layers, stacked LSTMs, batch normalization,
//! adaptive average pooling, dropout and activations, plus a weighted BCE loss, SGD/Adam
//! and a binary checkpoint format.
//!
//! Everything runs in `f64` on the CPU. Layers hold [`ParamId`] handles into a shared
//! [`ParameterStore`]; a forward pass in [`Mode::Train`] returns a [`Cache`] that the
//! matching backward pass consumes, accumulating parameter gradients into the store.

pub mod checkpoint;
mod error;
mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod loss;
mod lstm;
pub mod optim;
mod params;
mod tensor;

pub use error::{NnError, Result};
pub use layers::{Cache, Layer, LayerSpec, Mode, Sequential, TrainState};
pub use lstm::Lstm;
pub use optim::{Optimizer, OptimizerKind, TrainConfig};
pub use params::{Param, ParamId, ParameterStore};
pub use tensor::Tensor;
