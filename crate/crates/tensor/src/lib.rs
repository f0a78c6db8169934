//! Minimal dense-tensor core with reverse-mode gradients.
//!
//! Covers exactly the operator set the 1D ECG classifiers need: matmul,
//! conv1d, pooling, activations, softmax (plain and key-masked), layer/batch
//! norm, dropout, LSTM steps, attention, embedding lookup, reductions and
//! cross-entropy — each with a backward rule checked against central finite
//! differences.

pub mod adam;
pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod init;
pub mod ops;
mod scalar;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, StepOutcome};
pub use error::{Result, TensorError};
pub use scalar::Scalar;
pub use tape::{backward, Tape};
pub use tensor::{no_grad, Tensor};

/// Training-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, used by the gradient-check oracles.
pub type Tensor64 = Tensor<f64>;
