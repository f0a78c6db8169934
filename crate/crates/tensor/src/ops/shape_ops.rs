//! Shape manipulation: reshape, permute, concat, slice, broadcast.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{Backward, Node, Tensor};

struct ReshapeBack;

impl<S: Scalar> Backward<S> for ReshapeBack {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            parents[0].accumulate_grad(g);
        }
    }
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_copy<S: Scalar>(data: &[S], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<S>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides_of(shape);
    let out_strides = strides_of(&out_shape);
    let mut out = vec![S::zero(); data.len()];
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    for (flat, &v) in data.iter().enumerate() {
        // decode flat -> multi-index
        let mut rem = flat;
        for d in 0..rank {
            idx[d] = rem / in_strides[d];
            rem %= in_strides[d];
        }
        let mut of = 0;
        for (d, &p) in perm.iter().enumerate() {
            of += idx[p] * out_strides[d];
        }
        out[of] = v;
    }
    (out_shape, out)
}

struct PermuteBack {
    inverse: Vec<usize>,
}

impl<S: Scalar> Backward<S> for PermuteBack {
    fn backward(&self, node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            let (_, contrib) = permute_copy(g, &node.shape, &self.inverse);
            parents[0].accumulate_grad(&contrib);
        }
    }
}

struct ConcatBack {
    axis: usize,
    // per-parent extent along the concat axis
    extents: Vec<usize>,
    outer: usize,
    inner: usize,
}

impl<S: Scalar> Backward<S> for ConcatBack {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        let total: usize = self.extents.iter().sum();
        let mut offset = 0;
        for (p, &ext) in parents.iter().zip(&self.extents) {
            if p.requires_grad() {
                let mut contrib = vec![S::zero(); self.outer * ext * self.inner];
                for o in 0..self.outer {
                    let src = (o * total + offset) * self.inner;
                    let dst = o * ext * self.inner;
                    contrib[dst..dst + ext * self.inner]
                        .copy_from_slice(&g[src..src + ext * self.inner]);
                }
                p.accumulate_grad(&contrib);
            }
            offset += ext;
        }
        let _ = self.axis;
    }
}

struct SliceBack {
    start: usize,
    len: usize,
    full: usize,
    outer: usize,
    inner: usize,
}

impl<S: Scalar> Backward<S> for SliceBack {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            let mut contrib = vec![S::zero(); self.outer * self.full * self.inner];
            for o in 0..self.outer {
                let dst = (o * self.full + self.start) * self.inner;
                let src = o * self.len * self.inner;
                contrib[dst..dst + self.len * self.inner]
                    .copy_from_slice(&g[src..src + self.len * self.inner]);
            }
            parents[0].accumulate_grad(&contrib);
        }
    }
}

struct BroadcastFirstBack {
    copies: usize,
    chunk: usize,
}

impl<S: Scalar> Backward<S> for BroadcastFirstBack {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            let mut contrib = vec![S::zero(); self.chunk];
            for c in 0..self.copies {
                for (ci, gi) in contrib.iter_mut().zip(&g[c * self.chunk..(c + 1) * self.chunk]) {
                    *ci += *gi;
                }
            }
            parents[0].accumulate_grad(&contrib);
        }
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(ReshapeBack),
        ))
    }

    /// Reorder axes; `perm` must be a permutation of `0..rank`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<S>> {
        let rank = self.shape().len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::arg("permute", format!("bad permutation {perm:?} for rank {rank}")));
        }
        let (out_shape, out) = permute_copy(&self.data(), self.shape(), perm);
        let mut inverse = vec![0usize; rank];
        for (d, &p) in perm.iter().enumerate() {
            inverse[p] = d;
        }
        Ok(Tensor::from_op(
            out_shape,
            out,
            "permute",
            vec![self.clone()],
            Box::new(PermuteBack { inverse }),
        ))
    }

    pub fn concat(parts: &[Tensor<S>], axis: usize) -> Result<Tensor<S>> {
        if parts.is_empty() {
            return Err(TensorError::arg("concat", "empty input list"));
        }
        let base = parts[0].shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::arg("concat", format!("axis {axis} out of range for rank {}", base.len())));
        }
        for p in parts {
            let s = p.shape();
            if s.len() != base.len()
                || s.iter().enumerate().any(|(d, &v)| d != axis && v != base[d])
            {
                return Err(TensorError::shape(
                    "concat",
                    format!("{:?} vs {:?} along axis {axis}", base, s),
                ));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut out = vec![S::zero(); outer * total * inner];
        let mut offset = 0;
        for (p, &ext) in parts.iter().zip(&extents) {
            let d = p.data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                let src = o * ext * inner;
                out[dst..dst + ext * inner].copy_from_slice(&d[src..src + ext * inner]);
            }
            offset += ext;
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(Tensor::from_op(
            shape,
            out,
            "concat",
            parts.to_vec(),
            Box::new(ConcatBack { axis, extents, outer, inner }),
        ))
    }

    /// Copy the half-open range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<S>> {
        let shape = self.shape();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(TensorError::arg(
                "slice",
                format!("range {start}..{end} on axis {axis} of {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let len = end - start;
        let mut out = vec![S::zero(); outer * len * inner];
        {
            let d = self.data();
            for o in 0..outer {
                let src = (o * full + start) * inner;
                let dst = o * len * inner;
                out[dst..dst + len * inner].copy_from_slice(&d[src..src + len * inner]);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Ok(Tensor::from_op(
            out_shape,
            out,
            "slice",
            vec![self.clone()],
            Box::new(SliceBack { start, len, full, outer, inner }),
        ))
    }

    /// Repeat a leading axis of extent 1 `copies` times.
    pub fn broadcast_first(&self, copies: usize) -> Result<Tensor<S>> {
        let shape = self.shape();
        if shape.first() != Some(&1) {
            return Err(TensorError::shape(
                "broadcast_first",
                format!("{shape:?} must start with extent 1"),
            ));
        }
        let chunk = self.numel();
        let mut out = Vec::with_capacity(chunk * copies);
        {
            let d = self.data();
            for _ in 0..copies {
                out.extend_from_slice(&d);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[0] = copies;
        Ok(Tensor::from_op(
            out_shape,
            out,
            "broadcast_first",
            vec![self.clone()],
            Box::new(BroadcastFirstBack { copies, chunk }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::backward;
    use crate::tensor::Tensor;

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::<f64>::from_vec(&[2, 3, 4], (0..24).map(|v| v as f64).collect()).unwrap();
        let y = x.permute(&[1, 2, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 4, 2]);
        let z = y.permute(&[2, 0, 1]).unwrap();
        assert_eq!(z.to_vec(), x.to_vec());
    }

    #[test]
    fn concat_and_slice_invert() {
        let a = Tensor::<f64>::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 3], vec![5., 6., 7., 8., 9., 10.]).unwrap();
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        assert_eq!(c.to_vec(), vec![1., 2., 5., 6., 7., 3., 4., 8., 9., 10.]);
        let back = c.slice(1, 2, 5).unwrap();
        assert_eq!(back.to_vec(), b.to_vec());
    }

    #[test]
    fn slice_gradient_scatters() {
        let x = Tensor::<f64>::param(&[1, 4], vec![1., 2., 3., 4.]).unwrap();
        let loss = x.slice(1, 1, 3).unwrap().sum_all().unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0., 1., 1., 0.]);
    }

    #[test]
    fn broadcast_first_sums_gradient() {
        let x = Tensor::<f64>::param(&[1, 3], vec![1., 2., 3.]).unwrap();
        let y = x.broadcast_first(4).unwrap();
        assert_eq!(y.shape(), &[4, 3]);
        let loss = y.sum_all().unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![4., 4., 4.]);
    }
}
