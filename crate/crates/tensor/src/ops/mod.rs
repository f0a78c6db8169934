//! The operator set: forward kernels plus their backward rules.

mod attention;
mod conv;
mod dropout;
mod elementwise;
mod embed;
mod loss;
mod lstm;
mod matmul;
mod norm;
mod reduce;
mod shape_ops;
mod softmax;

pub use attention::{multi_head_attention, AttentionParams};
pub use dropout::dropout_with_mask;
pub use embed::embedding;
pub use loss::cross_entropy_loss;
pub use lstm::{lstm_step, lstm_step_pregates, LstmParams};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) fn same_shape<S: Scalar>(
    op: &'static str,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}
