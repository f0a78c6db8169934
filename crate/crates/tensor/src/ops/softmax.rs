//! Softmax over the last axis, with an optional key mask.

use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{Backward, Node, Tensor};

/// Softmax backward reads its own output: `dx = y * (g - sum(g * y))` per
/// row. Masked positions have `y = 0`, so their gradient is exactly zero.
struct SoftmaxBack {
    last: usize,
}

impl<S: Scalar> Backward<S> for SoftmaxBack {
    fn backward(&self, node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if !parents[0].requires_grad() {
            return;
        }
        let y = node.data.borrow();
        let mut contrib = vec![S::zero(); g.len()];
        for r in 0..g.len() / self.last {
            let span = r * self.last..(r + 1) * self.last;
            let yr = &y[span.clone()];
            let gr = &g[span.clone()];
            let dot: S = yr.iter().zip(gr).map(|(&yi, &gi)| yi * gi).sum();
            for ((ci, &yi), &gi) in contrib[span].iter_mut().zip(yr).zip(gr) {
                *ci = yi * (gi - dot);
            }
        }
        drop(y);
        parents[0].accumulate_grad(&contrib);
    }
}

fn softmax_rows<S: Scalar>(
    x: &[S],
    last: usize,
    mask: Option<(&[bool], usize)>, // (mask rows, group: rows per mask row)
) -> Result<Vec<S>> {
    let mut out = vec![S::zero(); x.len()];
    let rows = x.len() / last;
    for r in 0..rows {
        let xr = &x[r * last..(r + 1) * last];
        let mr = mask.map(|(m, group)| &m[(r / group) * last..(r / group + 1) * last]);
        let masked = |j: usize| mr.map_or(false, |m| m[j]);

        let mut max = S::neg_infinity();
        for (j, &v) in xr.iter().enumerate() {
            if !masked(j) && v > max {
                max = v;
            }
        }
        if max == S::neg_infinity() {
            return Err(TensorError::AllMasked);
        }
        let mut denom = S::zero();
        let or = &mut out[r * last..(r + 1) * last];
        for (j, &v) in xr.iter().enumerate() {
            if masked(j) {
                or[j] = S::zero();
            } else {
                let e = (v - max).exp();
                or[j] = e;
                denom += e;
            }
        }
        for v in or.iter_mut() {
            *v = *v / denom;
        }
    }
    Ok(out)
}

impl<S: Scalar> Tensor<S> {
    /// Softmax over the last axis.
    pub fn softmax_last(&self) -> Result<Tensor<S>> {
        let Some(&last) = self.shape().last() else {
            return Err(TensorError::arg("softmax", "scalar input"));
        };
        let out = softmax_rows(&self.data(), last, None)?;
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            "softmax",
            vec![self.clone()],
            Box::new(SoftmaxBack { last }),
        ))
    }

    /// Softmax over the last axis where masked positions receive exactly
    /// zero weight. `mask` holds `mask_rows` rows of length `last`
    /// (`true` = masked out); consecutive groups of `rows / mask_rows` input
    /// rows share one mask row.
    ///
    /// Errors with [`TensorError::AllMasked`] if some mask row hides every
    /// position.
    pub fn softmax_last_masked(&self, mask: &Rc<Vec<bool>>, mask_rows: usize) -> Result<Tensor<S>> {
        let Some(&last) = self.shape().last() else {
            return Err(TensorError::arg("softmax", "scalar input"));
        };
        let rows = self.numel() / last;
        if mask.len() != mask_rows * last || mask_rows == 0 || rows % mask_rows != 0 {
            return Err(TensorError::arg(
                "softmax",
                format!("mask of {} bits does not tile {rows} rows of {last}", mask.len()),
            ));
        }
        let group = rows / mask_rows;
        let out = softmax_rows(&self.data(), last, Some((mask, group)))?;
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            "softmax",
            vec![self.clone()],
            Box::new(SoftmaxBack { last }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use std::rc::Rc;

    use crate::tensor::Tensor;

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let x = Tensor::<f64>::from_vec(&[3], vec![0.0; 3]).unwrap();
        let y = x.softmax_last().unwrap();
        for v in y.to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let x = Tensor::<f64>::from_vec(&[2, 4], vec![1., -2., 0.5, 3., 0., 0., 10., -10.]).unwrap();
        let y = x.softmax_last().unwrap();
        let v = y.to_vec();
        for r in 0..2 {
            let s: f64 = v[r * 4..(r + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(v[r * 4..(r + 1) * 4].iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn masked_positions_are_exactly_zero() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let mask = Rc::new(vec![false, true, false]);
        let y = x.softmax_last_masked(&mask, 1).unwrap();
        let v = y.to_vec();
        assert_eq!(v[1], 0.0);
        assert_eq!(v[4], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_row_errors() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![1., 2.]).unwrap();
        let mask = Rc::new(vec![true, true]);
        assert!(x.softmax_last_masked(&mask, 1).is_err());
    }
}
