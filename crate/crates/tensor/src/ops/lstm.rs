//! Single LSTM step, composed from primitive operations.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weights of one LSTM layer. Gate blocks are ordered `i, f, g, o` along the
/// last axis.
pub struct LstmParams<S: Scalar> {
    /// `(input_dim, 4 * hidden)`
    pub w_ih: Tensor<S>,
    /// `(hidden, 4 * hidden)`
    pub w_hh: Tensor<S>,
    /// `(4 * hidden)`
    pub bias: Tensor<S>,
}

impl<S: Scalar> LstmParams<S> {
    pub fn hidden_dim(&self) -> usize {
        self.w_hh.shape()[0]
    }

    pub fn tensors(&self) -> Vec<(&'static str, Tensor<S>)> {
        vec![
            ("w_ih", self.w_ih.clone()),
            ("w_hh", self.w_hh.clone()),
            ("bias", self.bias.clone()),
        ]
    }
}

/// One recurrence step given pre-computed input gates
/// `x_gates = x_t . w_ih` of shape `(B, 4H)`.
///
/// `recurrent_mask`, when present, is a fixed `(B, H)` dropout mask tensor
/// (already scaled) applied to `h_prev` on the recurrent path only.
pub fn lstm_step_pregates<S: Scalar>(
    x_gates: &Tensor<S>,
    h_prev: &Tensor<S>,
    c_prev: &Tensor<S>,
    params: &LstmParams<S>,
    recurrent_mask: Option<&Tensor<S>>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let h = params.hidden_dim();
    let b = h_prev.shape().first().copied().unwrap_or(0);
    if h_prev.shape() != [b, h] || c_prev.shape() != [b, h] || x_gates.shape() != [b, 4 * h] {
        return Err(TensorError::shape(
            "lstm_step",
            format!(
                "x_gates {:?}, h {:?}, c {:?} for hidden {h}",
                x_gates.shape(),
                h_prev.shape(),
                c_prev.shape()
            ),
        ));
    }
    let h_in = match recurrent_mask {
        Some(m) => h_prev.mul(m)?,
        None => h_prev.clone(),
    };
    let gates = x_gates.add(&h_in.matmul(&params.w_hh)?)?.add(&params.bias)?;
    let i = gates.slice(1, 0, h)?.sigmoid()?;
    let f = gates.slice(1, h, 2 * h)?.sigmoid()?;
    let g = gates.slice(1, 2 * h, 3 * h)?.tanh_act()?;
    let o = gates.slice(1, 3 * h, 4 * h)?.sigmoid()?;
    let c = f.mul(c_prev)?.add(&i.mul(&g)?)?;
    let h_out = o.mul(&c.tanh_act()?)?;
    Ok((h_out, c))
}

/// One recurrence step from the raw input `x_t (B, I)`.
pub fn lstm_step<S: Scalar>(
    x_t: &Tensor<S>,
    h_prev: &Tensor<S>,
    c_prev: &Tensor<S>,
    params: &LstmParams<S>,
    recurrent_mask: Option<&Tensor<S>>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let x_gates = x_t.matmul(&params.w_ih)?;
    lstm_step_pregates(&x_gates, h_prev, c_prev, params, recurrent_mask)
}
