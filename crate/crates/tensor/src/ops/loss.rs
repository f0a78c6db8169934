//! Softmax cross-entropy over a batch of logits.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{Backward, Node, Tensor};

struct CrossEntropyBack<S> {
    // softmax probabilities and one-hot targets saved from the forward pass
    probs: Vec<S>,
    targets: Vec<S>,
    batch: usize,
    classes: usize,
}

impl<S: Scalar> Backward<S> for CrossEntropyBack<S> {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            let scale = g[0] / S::from_f64(self.batch as f64);
            let contrib: Vec<S> = self
                .probs
                .iter()
                .zip(self.targets.iter())
                .map(|(&p, &t)| (p - t) * scale)
                .collect();
            parents[0].accumulate_grad(&contrib);
        }
        let _ = self.classes;
    }
}

/// Mean negative log softmax probability of the true class.
///
/// `logits` is `(B, C)`; `one_hot` is `(B, C)` with exactly one `1` per row.
pub fn cross_entropy_loss<S: Scalar>(logits: &Tensor<S>, one_hot: &Tensor<S>) -> Result<Tensor<S>> {
    let ls = logits.shape();
    if ls.len() != 2 || one_hot.shape() != ls {
        return Err(TensorError::shape(
            "cross_entropy",
            format!("logits {:?} vs labels {:?}", ls, one_hot.shape()),
        ));
    }
    let (batch, classes) = (ls[0], ls[1]);
    let z = logits.data();
    let y = one_hot.data();

    for r in 0..batch {
        let row = &y[r * classes..(r + 1) * classes];
        let ones = row.iter().filter(|&&v| v == S::one()).count();
        let zeros = row.iter().filter(|&&v| v == S::zero()).count();
        if ones != 1 || ones + zeros != classes {
            return Err(TensorError::NotOneHot { row: r });
        }
    }

    let mut probs = vec![S::zero(); z.len()];
    let mut total = S::zero();
    for r in 0..batch {
        let zr = &z[r * classes..(r + 1) * classes];
        let max = zr.iter().copied().fold(S::neg_infinity(), S::max);
        let mut denom = S::zero();
        for (j, &v) in zr.iter().enumerate() {
            let e = (v - max).exp();
            probs[r * classes + j] = e;
            denom += e;
        }
        let log_denom = denom.ln();
        for j in 0..classes {
            probs[r * classes + j] = probs[r * classes + j] / denom;
            if y[r * classes + j] == S::one() {
                total += log_denom - (zr[j] - max);
            }
        }
    }
    let loss = total / S::from_f64(batch as f64);
    let targets = y.clone();
    drop(z);
    drop(y);
    Ok(Tensor::from_op(
        vec![],
        vec![loss],
        "cross_entropy",
        vec![logits.clone(), one_hot.clone()],
        Box::new(CrossEntropyBack { probs, targets, batch, classes }),
    ))
}

#[cfg(test)]
mod tests {
    use super::cross_entropy_loss;
    use crate::tape::backward;
    use crate::tensor::Tensor;

    #[test]
    fn equal_logits_three_classes_is_ln3() {
        let logits = Tensor::<f64>::from_vec(&[2, 3], vec![0.5; 6]).unwrap();
        let labels = Tensor::from_vec(&[2, 3], vec![1., 0., 0., 0., 0., 1.]).unwrap();
        let loss = cross_entropy_loss(&logits, &labels).unwrap();
        assert!((loss.item() - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_true_logit_drives_loss_to_zero() {
        let logits = Tensor::<f64>::from_vec(&[1, 3], vec![50.0, 0.0, 0.0]).unwrap();
        let labels = Tensor::from_vec(&[1, 3], vec![1., 0., 0.]).unwrap();
        let loss = cross_entropy_loss(&logits, &labels).unwrap();
        assert!(loss.item() < 1e-12);
    }

    #[test]
    fn matches_direct_formula_on_random_batch() {
        let z = vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4, -0.9, 0.25, 1.4, 0.0, 0.0, 3.0];
        let truth = [2usize, 0, 1, 2];
        let mut one_hot = vec![0.0f64; 12];
        for (r, &t) in truth.iter().enumerate() {
            one_hot[r * 3 + t] = 1.0;
        }
        let logits = Tensor::from_vec(&[4, 3], z.clone()).unwrap();
        let labels = Tensor::from_vec(&[4, 3], one_hot).unwrap();
        let loss = cross_entropy_loss(&logits, &labels).unwrap();

        // independent scalar computation of -sum(log p)/N
        let mut expected = 0.0f64;
        for (r, &t) in truth.iter().enumerate() {
            let row = &z[r * 3..(r + 1) * 3];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            expected -= (row[t].exp() / denom).ln();
        }
        expected /= 4.0;
        assert!((loss.item() - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_one_hot_rows() {
        let logits = Tensor::<f64>::zeros(&[1, 3]);
        let labels = Tensor::from_vec(&[1, 3], vec![0.5, 0.5, 0.0]).unwrap();
        assert!(cross_entropy_loss(&logits, &labels).is_err());
    }

    #[test]
    fn gradient_is_softmax_minus_target_over_batch() {
        let logits = Tensor::<f64>::param(&[1, 3], vec![0.0, 0.0, 0.0]).unwrap();
        let labels = Tensor::from_vec(&[1, 3], vec![0., 1., 0.]).unwrap();
        let loss = cross_entropy_loss(&logits, &labels).unwrap();
        backward(&loss).unwrap();
        let g = logits.grad().unwrap();
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((g[1] + 2.0 / 3.0).abs() < 1e-12);
        assert!((g[2] - 1.0 / 3.0).abs() < 1e-12);
    }
}
