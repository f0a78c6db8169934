//! Backward traversal of a recorded forward pass.

use std::collections::HashSet;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered record of the operations reachable from a loss tensor, arranged so
/// that every operation appears after all of its consumers were produced
/// (topological order of the forward DAG).
///
/// Running the tape consumes it together with the per-node operation records,
/// so each recorded forward pass supports exactly one backward pass.
pub struct Tape<S: Scalar> {
    order: Vec<Tensor<S>>,
}

impl<S: Scalar> Tape<S> {
    /// Collect the gradient-relevant subgraph below `loss`.
    ///
    /// Errors if `loss` is not scalar or has no recorded operation (either it
    /// was produced outside a taped forward pass or its tape was already
    /// consumed by a previous backward call).
    pub fn trace(loss: &Tensor<S>) -> Result<Self> {
        if loss.numel() != 1 {
            return Err(TensorError::NotScalar { shape: loss.shape().to_vec() });
        }
        if loss.node().op.borrow().is_none() {
            return Err(TensorError::Untaped);
        }

        // Iterative post-order DFS over parents that can carry gradients.
        let mut order: Vec<Tensor<S>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<S>, usize)> = vec![(loss.clone(), 0)];
        visited.insert(loss.node().id);
        while let Some((t, child_idx)) = stack.pop() {
            let next = {
                let op = t.node().op.borrow();
                op.as_ref().and_then(|rec| {
                    rec.parents[child_idx..]
                        .iter()
                        .enumerate()
                        .find(|(_, p)| p.requires_grad() && !visited.contains(&p.node().id))
                        .map(|(off, p)| (child_idx + off, p.clone()))
                })
            };
            match next {
                Some((idx, parent)) => {
                    visited.insert(parent.node().id);
                    stack.push((t, idx + 1));
                    stack.push((parent, 0));
                }
                None => order.push(t),
            }
        }
        Ok(Tape { order })
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Propagate gradients from the loss down to every reachable tensor that
    /// requires them. Consumes the tape and the per-node operation records.
    ///
    /// Gradients of interior nodes are released as soon as their operation
    /// has run, unless `retain_grad()` was requested; leaves keep theirs.
    pub fn run(self) -> Result<()> {
        let loss = self.order.last().expect("tape is never empty");
        loss.accumulate_grad(&[S::one()]);

        for t in self.order.iter().rev() {
            let rec = t.node().op.borrow_mut().take();
            let Some(rec) = rec else { continue }; // leaf
            let grad = {
                let g = t.node().grad.borrow();
                match g.as_ref() {
                    Some(g) => g.clone(),
                    // No gradient flowed into this node (e.g. unused output).
                    None => continue,
                }
            };
            rec.rule.backward(t.node(), &rec.parents, &grad);
            if !t.node().retain_grad.get() {
                t.node().grad.borrow_mut().take();
            }
        }
        Ok(())
    }
}

/// Populate gradients of every `requires_grad` tensor reachable from `loss`.
///
/// `loss` must be the scalar output of a taped forward pass; the tape is
/// consumed, so calling this twice on the same graph returns
/// [`TensorError::Untaped`].
pub fn backward<S: Scalar>(loss: &Tensor<S>) -> Result<()> {
    Tape::trace(loss)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::<f64>::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = x.mul(&x).unwrap().sum_all().unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_twice_errors() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = x.sum_all().unwrap();
        backward(&loss).unwrap();
        assert!(matches!(backward(&loss), Err(TensorError::Untaped)));
    }

    #[test]
    fn backward_on_non_scalar_errors() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.relu().unwrap();
        assert!(matches!(backward(&y), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn backward_on_untaped_constant_errors() {
        let c = Tensor::<f64>::scalar(3.0);
        assert!(matches!(backward(&c), Err(TensorError::Untaped)));
    }

    #[test]
    fn constant_inputs_get_no_grad() {
        let p = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let c = Tensor::<f64>::from_vec(&[2], vec![5.0, 7.0]).unwrap();
        let loss = p.mul(&c).unwrap().sum_all().unwrap();
        backward(&loss).unwrap();
        assert_eq!(p.grad().unwrap(), vec![5.0, 7.0]);
        assert!(c.grad().is_none());
    }

    #[test]
    fn gradients_accumulate_across_shared_use() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 4.0]).unwrap();
        // loss = sum(x + x) => dloss/dx = 2
        let loss = x.add(&x).unwrap().sum_all().unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn retain_grad_keeps_interior_gradient() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.mul(&x).unwrap();
        y.retain_grad();
        let loss = y.sum_all().unwrap();
        backward(&loss).unwrap();
        assert_eq!(y.grad().unwrap(), vec![1.0, 1.0]);
    }
}
