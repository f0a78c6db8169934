//! Inverted dropout.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{Backward, Node, Tensor};

struct DropoutBack<S: Scalar> {
    mask: Rc<Vec<bool>>,
    scale: S,
}

impl<S: Scalar> Backward<S> for DropoutBack<S> {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            let contrib: Vec<S> = g
                .iter()
                .zip(self.mask.iter())
                .map(|(&gi, &keep)| if keep { gi * self.scale } else { S::zero() })
                .collect();
            parents[0].accumulate_grad(&contrib);
        }
    }
}

/// Apply a fixed keep-mask with inverted scaling: kept elements are
/// multiplied by `1 / (1 - rate)` so the expected value is preserved.
pub fn dropout_with_mask<S: Scalar>(
    x: &Tensor<S>,
    mask: Rc<Vec<bool>>,
    rate: f64,
) -> Result<Tensor<S>> {
    if mask.len() != x.numel() {
        return Err(TensorError::shape(
            "dropout",
            format!("mask of {} bits for {} elements", mask.len(), x.numel()),
        ));
    }
    let scale = S::from_f64(1.0 / (1.0 - rate));
    let out: Vec<S> = x
        .data()
        .iter()
        .zip(mask.iter())
        .map(|(&v, &keep)| if keep { v * scale } else { S::zero() })
        .collect();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        "dropout",
        vec![x.clone()],
        Box::new(DropoutBack { mask, scale }),
    ))
}

/// Sample a fresh Bernoulli keep-mask and return it together with `x` after
/// inverted dropout (training mode). Evaluation mode is simply the absence
/// of this call: the identity.
pub fn dropout_train<S: Scalar>(
    x: &Tensor<S>,
    rate: f64,
    rng: &mut impl Rng,
) -> Result<Tensor<S>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::arg("dropout", format!("rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(x.clone());
    }
    let mask: Vec<bool> = (0..x.numel()).map(|_| rng.gen::<f64>() >= rate).collect();
    dropout_with_mask(x, Rc::new(mask), rate)
}

impl<S: Scalar> Tensor<S> {
    /// Training-mode dropout; see [`dropout_train`].
    pub fn dropout(&self, rate: f64, rng: &mut impl Rng) -> Result<Tensor<S>> {
        dropout_train(self, rate, rng)
    }
}
