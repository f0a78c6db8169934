//! Multi-head self-attention with optional key masking.

use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Projection weights of one attention block. All four maps are `(D, D)`
/// with `(D)` biases.
pub struct AttentionParams<S: Scalar> {
    pub wq: Tensor<S>,
    pub bq: Tensor<S>,
    pub wk: Tensor<S>,
    pub bk: Tensor<S>,
    pub wv: Tensor<S>,
    pub bv: Tensor<S>,
    pub wo: Tensor<S>,
    pub bo: Tensor<S>,
}

impl<S: Scalar> AttentionParams<S> {
    pub fn tensors(&self) -> Vec<(&'static str, Tensor<S>)> {
        vec![
            ("wq", self.wq.clone()),
            ("bq", self.bq.clone()),
            ("wk", self.wk.clone()),
            ("bk", self.bk.clone()),
            ("wv", self.wv.clone()),
            ("bv", self.bv.clone()),
            ("wo", self.wo.clone()),
            ("bo", self.bo.clone()),
        ]
    }
}

fn split_heads<S: Scalar>(x: &Tensor<S>, b: usize, l: usize, h: usize, dh: usize) -> Result<Tensor<S>> {
    x.reshape(&[b, l, h, dh])?.permute(&[0, 2, 1, 3])
}

/// Scaled dot-product self-attention over `x (B, L, D)`.
///
/// `key_mask`, when given, holds `B * L` booleans (`true` = the key at that
/// position is hidden from every query; its attention weight is exactly 0).
/// Returns the block output `(B, L, D)` and the attention weights
/// `(B, H, L, L)` whose rows sum to 1 over unmasked keys.
pub fn multi_head_attention<S: Scalar>(
    x: &Tensor<S>,
    n_heads: usize,
    params: &AttentionParams<S>,
    key_mask: Option<&Rc<Vec<bool>>>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(TensorError::shape("attention", format!("expected (B,L,D), got {shape:?}")));
    }
    let (b, l, d) = (shape[0], shape[1], shape[2]);
    if n_heads == 0 || d % n_heads != 0 {
        return Err(TensorError::arg(
            "attention",
            format!("embedding dim {d} not divisible by {n_heads} heads"),
        ));
    }
    if let Some(m) = key_mask {
        if m.len() != b * l {
            return Err(TensorError::arg(
                "attention",
                format!("key mask of {} bits for batch {b} x length {l}", m.len()),
            ));
        }
    }
    let dh = d / n_heads;

    let q = split_heads(&x.matmul(&params.wq)?.add(&params.bq)?, b, l, n_heads, dh)?;
    let k = split_heads(&x.matmul(&params.wk)?.add(&params.bk)?, b, l, n_heads, dh)?;
    let v = split_heads(&x.matmul(&params.wv)?.add(&params.bv)?, b, l, n_heads, dh)?;

    let scores = q.matmul_nt(&k)?.scale(S::from_f64(1.0 / (dh as f64).sqrt()))?;
    let attn = match key_mask {
        // one mask row per batch element, shared by all heads and queries
        Some(m) => {
            // Expand (B, L) mask rows so row b of the mask applies to the
            // H * L score rows of batch element b.
            scores.softmax_last_masked(m, b)?
        }
        None => scores.softmax_last()?,
    };

    let ctx = attn.matmul(&v)?; // (B, H, L, dh)
    let merged = ctx.permute(&[0, 2, 1, 3])?.reshape(&[b, l, d])?;
    let out = merged.matmul(&params.wo)?.add(&params.bo)?;
    Ok((out, attn))
}

#[cfg(test)]
mod tests {
    use std::rc::Rc;

    use super::{multi_head_attention, AttentionParams};
    use crate::tensor::Tensor;

    fn identity_params(d: usize) -> AttentionParams<f64> {
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        let w = || Tensor::from_vec(&[d, d], eye.clone()).unwrap();
        let b = || Tensor::from_vec(&[d], vec![0.0; d]).unwrap();
        AttentionParams { wq: w(), bq: b(), wk: w(), bk: b(), wv: w(), bv: b(), wo: w(), bo: b() }
    }

    #[test]
    fn single_position_attends_to_itself() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 4], vec![0.3, -0.7, 1.1, 0.2]).unwrap();
        let (_, attn) = multi_head_attention(&x, 2, &identity_params(4), None).unwrap();
        assert_eq!(attn.shape(), &[1, 2, 1, 1]);
        for v in attn.to_vec() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_sum_to_one_and_are_nonnegative() {
        let x = Tensor::<f64>::from_vec(
            &[2, 3, 4],
            (0..24).map(|v| ((v * 7919) % 13) as f64 * 0.31 - 1.5).collect(),
        )
        .unwrap();
        let (_, attn) = multi_head_attention(&x, 2, &identity_params(4), None).unwrap();
        let a = attn.to_vec();
        for row in a.chunks_exact(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn masked_keys_get_exact_zero_weight() {
        let l = 5;
        let x = Tensor::<f64>::from_vec(
            &[1, l, 4],
            (0..4 * l).map(|v| (v as f64 * 0.7).sin()).collect(),
        )
        .unwrap();
        let mut mask = vec![false; l];
        mask[3] = true;
        mask[4] = true;
        let (_, attn) = multi_head_attention(&x, 2, &identity_params(4), Some(&Rc::new(mask))).unwrap();
        let a = attn.to_vec();
        for (i, row) in a.chunks_exact(l).enumerate() {
            assert_eq!(row[3], 0.0, "row {i}");
            assert_eq!(row[4], 0.0, "row {i}");
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn all_masked_is_a_contract_error() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 4], vec![0.1; 8]).unwrap();
        let mask = Rc::new(vec![true, true]);
        assert!(multi_head_attention(&x, 2, &identity_params(4), Some(&mask)).is_err());
    }

    #[test]
    fn head_count_must_divide_embed_dim() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4]);
        assert!(multi_head_attention(&x, 3, &identity_params(4), None).is_err());
    }
}
