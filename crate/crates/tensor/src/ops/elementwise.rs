//! Elementwise arithmetic and activations.

use crate::error::{Result, TensorError};
use crate::ops::same_shape;
use crate::scalar::Scalar;
use crate::tensor::{Backward, Node, Tensor};

/// `add` broadcasts the smaller operand when its shape is a trailing suffix
/// of the larger one, e.g. `(B,L,D) + (D)` or `(B,L,D) + (L,D)`.
struct AddBack {
    big_len: usize,
    small_len: usize,
    swapped: bool, // parents[1] is the big operand
}

impl<S: Scalar> Backward<S> for AddBack {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        let (big, small) = if self.swapped {
            (&parents[1], &parents[0])
        } else {
            (&parents[0], &parents[1])
        };
        if big.requires_grad() {
            big.accumulate_grad(g);
        }
        if small.requires_grad() {
            if self.small_len == self.big_len {
                small.accumulate_grad(g);
            } else {
                let mut contrib = vec![S::zero(); self.small_len];
                for chunk in g.chunks_exact(self.small_len) {
                    for (ci, gi) in contrib.iter_mut().zip(chunk) {
                        *ci += *gi;
                    }
                }
                small.accumulate_grad(&contrib);
            }
        }
    }
}

struct SubBack;

impl<S: Scalar> Backward<S> for SubBack {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            parents[0].accumulate_grad(g);
        }
        if parents[1].requires_grad() {
            let neg: Vec<S> = g.iter().map(|&v| -v).collect();
            parents[1].accumulate_grad(&neg);
        }
    }
}

struct MulBack;

impl<S: Scalar> Backward<S> for MulBack {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            let b = parents[1].data();
            let contrib: Vec<S> = g.iter().zip(b.iter()).map(|(&gi, &bi)| gi * bi).collect();
            drop(b);
            parents[0].accumulate_grad(&contrib);
        }
        if parents[1].requires_grad() {
            let a = parents[0].data();
            let contrib: Vec<S> = g.iter().zip(a.iter()).map(|(&gi, &ai)| gi * ai).collect();
            drop(a);
            parents[1].accumulate_grad(&contrib);
        }
    }
}

struct ScaleBack<S> {
    factor: S,
}

impl<S: Scalar> Backward<S> for ScaleBack<S> {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            let contrib: Vec<S> = g.iter().map(|&gi| gi * self.factor).collect();
            parents[0].accumulate_grad(&contrib);
        }
    }
}

/// Unary activation. `df(x, y)` is the local derivative, given the input and
/// the already-computed output.
struct UnaryBack<S: Scalar> {
    df: fn(S, S) -> S,
}

impl<S: Scalar> Backward<S> for UnaryBack<S> {
    fn backward(&self, node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            let x = parents[0].data();
            let y = node.data.borrow();
            let contrib: Vec<S> = g
                .iter()
                .zip(x.iter().zip(y.iter()))
                .map(|(&gi, (&xi, &yi))| gi * (self.df)(xi, yi))
                .collect();
            drop(x);
            drop(y);
            parents[0].accumulate_grad(&contrib);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_forward<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (S::one() + inner.tanh())
}

fn gelu_df<S: Scalar>(x: S, _y: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + three * a * x * x)
}

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        let (big, small, swapped) = if self.numel() >= rhs.numel() {
            (self, rhs, false)
        } else {
            (rhs, self, true)
        };
        let suffix_ok = big.shape().ends_with(small.shape());
        if !suffix_ok {
            return Err(TensorError::shape(
                "add",
                format!("{:?} vs {:?} (broadcast needs a trailing-suffix shape)", self.shape(), rhs.shape()),
            ));
        }
        let small_len = small.numel().max(1);
        let mut out = big.to_vec();
        {
            let s = small.data();
            for chunk in out.chunks_exact_mut(small_len) {
                for (oi, si) in chunk.iter_mut().zip(s.iter()) {
                    *oi += *si;
                }
            }
        }
        Ok(Tensor::from_op(
            big.shape().to_vec(),
            out,
            "add",
            vec![self.clone(), rhs.clone()],
            Box::new(AddBack { big_len: big.numel(), small_len, swapped }),
        ))
    }

    pub fn sub(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("sub", self, rhs)?;
        let out: Vec<S> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            "sub",
            vec![self.clone(), rhs.clone()],
            Box::new(SubBack),
        ))
    }

    pub fn mul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("mul", self, rhs)?;
        let out: Vec<S> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            "mul",
            vec![self.clone(), rhs.clone()],
            Box::new(MulBack),
        ))
    }

    pub fn scale(&self, factor: S) -> Result<Tensor<S>> {
        let out: Vec<S> = self.data().iter().map(|&a| a * factor).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            "scale",
            vec![self.clone()],
            Box::new(ScaleBack { factor }),
        ))
    }

    pub fn relu(&self) -> Result<Tensor<S>> {
        let out: Vec<S> = self
            .data()
            .iter()
            .map(|&a| if a > S::zero() { a } else { S::zero() })
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            "relu",
            vec![self.clone()],
            Box::new(UnaryBack::<S> {
                df: |x, _| if x > S::zero() { S::one() } else { S::zero() },
            }),
        ))
    }

    /// Tanh-form GELU.
    pub fn gelu(&self) -> Result<Tensor<S>> {
        let out: Vec<S> = self.data().iter().map(|&a| gelu_forward(a)).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            "gelu",
            vec![self.clone()],
            Box::new(UnaryBack::<S> { df: gelu_df }),
        ))
    }

    pub fn sigmoid(&self) -> Result<Tensor<S>> {
        let out: Vec<S> = self
            .data()
            .iter()
            .map(|&a| S::one() / (S::one() + (-a).exp()))
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            "sigmoid",
            vec![self.clone()],
            Box::new(UnaryBack::<S> { df: |_, y| y * (S::one() - y) }),
        ))
    }

    pub fn tanh_act(&self) -> Result<Tensor<S>> {
        let out: Vec<S> = self.data().iter().map(|&a| a.tanh()).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            "tanh",
            vec![self.clone()],
            Box::new(UnaryBack::<S> { df: |_, y| S::one() - y * y }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::backward;
    use crate::tensor::Tensor;

    #[test]
    fn add_broadcasts_trailing_suffix() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::param(&[3], vec![10., 20., 30.]).unwrap();
        let y = x.add(&b).unwrap();
        assert_eq!(y.to_vec(), vec![11., 22., 33., 14., 25., 36.]);
        let loss = y.sum_all().unwrap();
        backward(&loss).unwrap();
        assert_eq!(b.grad().unwrap(), vec![2., 2., 2.]);
    }

    #[test]
    fn add_shape_mismatch_errors() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2]);
        assert!(x.add(&b).is_err());
    }

    #[test]
    fn sigmoid_midpoint() {
        let x = Tensor::<f64>::from_vec(&[1], vec![0.0]).unwrap();
        assert!((x.sigmoid().unwrap().item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn relu_clamps_negative() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(x.relu().unwrap().to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn gelu_matches_reference_points() {
        // Reference values of the tanh-form GELU.
        let x = Tensor::<f64>::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let y = x.gelu().unwrap();
        assert!((y.to_vec()[0] - 0.841_191_990_6).abs() < 1e-9);
        assert!((y.to_vec()[1] + 0.158_808_009_4).abs() < 1e-9);
    }
}
