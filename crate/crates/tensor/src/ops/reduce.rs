//! Reductions: sums and means.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{Backward, Node, Tensor};

struct FillBack<S> {
    factor: S,
    len: usize,
}

impl<S: Scalar> Backward<S> for FillBack<S> {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            let contrib = vec![g[0] * self.factor; self.len];
            parents[0].accumulate_grad(&contrib);
        }
    }
}

struct MeanLastBack<S> {
    last: usize,
    factor: S,
}

impl<S: Scalar> Backward<S> for MeanLastBack<S> {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            let mut contrib = vec![S::zero(); g.len() * self.last];
            for (row, &gi) in g.iter().enumerate() {
                let v = gi * self.factor;
                for c in contrib[row * self.last..(row + 1) * self.last].iter_mut() {
                    *c = v;
                }
            }
            parents[0].accumulate_grad(&contrib);
        }
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn sum_all(&self) -> Result<Tensor<S>> {
        let s: S = self.data().iter().copied().sum();
        Ok(Tensor::from_op(
            vec![],
            vec![s],
            "sum_all",
            vec![self.clone()],
            Box::new(FillBack { factor: S::one(), len: self.numel() }),
        ))
    }

    pub fn mean_all(&self) -> Result<Tensor<S>> {
        let n = self.numel();
        if n == 0 {
            return Err(TensorError::arg("mean_all", "empty tensor"));
        }
        let inv = S::one() / S::from_f64(n as f64);
        let s: S = self.data().iter().copied().sum();
        Ok(Tensor::from_op(
            vec![],
            vec![s * inv],
            "mean_all",
            vec![self.clone()],
            Box::new(FillBack { factor: inv, len: n }),
        ))
    }

    /// Mean over the last axis: `(..., L) -> (...)`.
    pub fn mean_last(&self) -> Result<Tensor<S>> {
        let shape = self.shape();
        let Some(&last) = shape.last() else {
            return Err(TensorError::arg("mean_last", "scalar input"));
        };
        if last == 0 {
            return Err(TensorError::arg("mean_last", "empty last axis"));
        }
        let inv = S::one() / S::from_f64(last as f64);
        let rows = self.numel() / last;
        let d = self.data();
        let out: Vec<S> = (0..rows)
            .map(|r| d[r * last..(r + 1) * last].iter().copied().sum::<S>() * inv)
            .collect();
        drop(d);
        Ok(Tensor::from_op(
            shape[..shape.len() - 1].to_vec(),
            out,
            "mean_last",
            vec![self.clone()],
            Box::new(MeanLastBack { last, factor: inv }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::backward;
    use crate::tensor::Tensor;

    #[test]
    fn mean_all_gradient_is_uniform() {
        let x = Tensor::<f64>::param(&[4], vec![1., 2., 3., 4.]).unwrap();
        let loss = x.mean_all().unwrap();
        assert!((loss.item() - 2.5).abs() < 1e-12);
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn mean_last_shapes() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let y = x.mean_last().unwrap();
        assert_eq!(y.shape(), &[2]);
        assert_eq!(y.to_vec(), vec![2.0, 5.0]);
    }
}
