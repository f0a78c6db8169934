//! Matrix products, plain and batched.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{Backward, Node, Tensor};

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
///
/// `op(a)` is `(m, k)`; with `ta` the buffer holds `(k, m)` and is read
/// transposed. `op(b)` is `(k, n)`; with `tb` the buffer holds `(n, k)`.
pub(crate) fn gemm_into<S: Scalar>(
    a: &[S],
    ta: bool,
    b: &[S],
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    beta: S,
    c: &mut [S],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        S::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct MatmulBack {
    m: usize,
    k: usize,
    n: usize,
    batch: usize,
    transpose_rhs: bool,
    shared_rhs: bool,
}

impl<S: Scalar> Backward<S> for MatmulBack {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        let (m, k, n) = (self.m, self.k, self.n);
        let a = parents[0].data();
        let b = parents[1].data();

        if parents[0].requires_grad() {
            let mut da = vec![S::zero(); a.len()];
            for i in 0..self.batch {
                let gi = &g[i * m * n..(i + 1) * m * n];
                let bi = if self.shared_rhs { &b[..] } else { &b[i * k * n..(i + 1) * k * n] };
                let dai = &mut da[i * m * k..(i + 1) * m * k];
                if self.transpose_rhs {
                    // da = g . b  (b buffer is (n, k))
                    gemm_into(gi, false, bi, false, m, n, k, S::one(), S::zero(), dai);
                } else {
                    // da = g . b^T (b buffer is (k, n))
                    gemm_into(gi, false, bi, true, m, n, k, S::one(), S::zero(), dai);
                }
            }
            drop(a);
            parents[0].accumulate_grad(&da);
        } else {
            drop(a);
        }

        if parents[1].requires_grad() {
            let a = parents[0].data();
            let mut db = vec![S::zero(); b.len()];
            for i in 0..self.batch {
                let gi = &g[i * m * n..(i + 1) * m * n];
                let ai = &a[i * m * k..(i + 1) * m * k];
                if self.shared_rhs {
                    // accumulate across the flattened batch
                    if self.transpose_rhs {
                        gemm_into(gi, true, ai, false, n, m, k, S::one(), S::one(), &mut db);
                    } else {
                        gemm_into(ai, true, gi, false, k, m, n, S::one(), S::one(), &mut db);
                    }
                } else {
                    let dbi = &mut db[i * k * n..(i + 1) * k * n];
                    if self.transpose_rhs {
                        // db (n, k) = g^T . a
                        gemm_into(gi, true, ai, false, n, m, k, S::one(), S::zero(), dbi);
                    } else {
                        // db (k, n) = a^T . g
                        gemm_into(ai, true, gi, false, k, m, n, S::one(), S::zero(), dbi);
                    }
                }
            }
            drop(a);
            drop(b);
            parents[1].accumulate_grad(&db);
        }
    }
}

impl<S: Scalar> Tensor<S> {
    /// `(..., m, k) x (k, n)` with a shared right operand, or
    /// `(..., m, k) x (..., k, n)` batched over identical leading dims.
    pub fn matmul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        let ls = self.shape();
        let rs = rhs.shape();
        if ls.is_empty() || rs.len() < 2 {
            return Err(TensorError::shape("matmul", format!("{ls:?} x {rs:?}")));
        }
        let k = *ls.last().unwrap();

        if rs.len() == 2 {
            // Flatten all leading dims into rows; one gemm.
            if rs[0] != k {
                return Err(TensorError::shape("matmul", format!("{ls:?} x {rs:?}")));
            }
            let n = rs[1];
            let m = self.numel() / k;
            let mut out = vec![S::zero(); m * n];
            gemm_into(&self.data(), false, &rhs.data(), false, m, k, n, S::one(), S::zero(), &mut out);
            let mut shape = ls[..ls.len() - 1].to_vec();
            shape.push(n);
            return Ok(Tensor::from_op(
                shape,
                out,
                "matmul",
                vec![self.clone(), rhs.clone()],
                Box::new(MatmulBack { m, k, n, batch: 1, transpose_rhs: false, shared_rhs: true }),
            ));
        }

        // Batched: identical leading dims.
        if ls.len() != rs.len() || ls[..ls.len() - 2] != rs[..rs.len() - 2] || rs[rs.len() - 2] != k {
            return Err(TensorError::shape("matmul", format!("{ls:?} x {rs:?}")));
        }
        let m = ls[ls.len() - 2];
        let n = rs[rs.len() - 1];
        let batch: usize = ls[..ls.len() - 2].iter().product();
        let mut out = vec![S::zero(); batch * m * n];
        {
            let a = self.data();
            let b = rhs.data();
            for i in 0..batch {
                gemm_into(
                    &a[i * m * k..(i + 1) * m * k],
                    false,
                    &b[i * k * n..(i + 1) * k * n],
                    false,
                    m,
                    k,
                    n,
                    S::one(),
                    S::zero(),
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let mut shape = ls[..ls.len() - 2].to_vec();
        shape.push(m);
        shape.push(n);
        Ok(Tensor::from_op(
            shape,
            out,
            "matmul",
            vec![self.clone(), rhs.clone()],
            Box::new(MatmulBack { m, k, n, batch, transpose_rhs: false, shared_rhs: false }),
        ))
    }

    /// `(..., m, k) x (..., n, k) -> (..., m, n)`: right operand used
    /// transposed without materializing the transpose.
    pub fn matmul_nt(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        let ls = self.shape();
        let rs = rhs.shape();
        if ls.len() < 2
            || rs.len() != ls.len()
            || ls[..ls.len() - 2] != rs[..rs.len() - 2]
            || ls.last() != rs.last()
        {
            return Err(TensorError::shape("matmul_nt", format!("{ls:?} x {rs:?}")));
        }
        let m = ls[ls.len() - 2];
        let k = *ls.last().unwrap();
        let n = rs[rs.len() - 2];
        let batch: usize = ls[..ls.len() - 2].iter().product();
        let mut out = vec![S::zero(); batch * m * n];
        {
            let a = self.data();
            let b = rhs.data();
            for i in 0..batch {
                gemm_into(
                    &a[i * m * k..(i + 1) * m * k],
                    false,
                    &b[i * n * k..(i + 1) * n * k],
                    true,
                    m,
                    k,
                    n,
                    S::one(),
                    S::zero(),
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let mut shape = ls[..ls.len() - 2].to_vec();
        shape.push(m);
        shape.push(n);
        Ok(Tensor::from_op(
            shape,
            out,
            "matmul_nt",
            vec![self.clone(), rhs.clone()],
            Box::new(MatmulBack { m, k, n, batch, transpose_rhs: true, shared_rhs: false }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::backward;
    use crate::tensor::Tensor;

    #[test]
    fn identity_matmul_is_identity() {
        let mut eye = vec![0.0f64; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let i3 = Tensor::from_vec(&[3, 3], eye).unwrap();
        let a = Tensor::from_vec(&[3, 3], (0..9).map(|v| v as f64 * 0.37 - 1.0).collect()).unwrap();
        let y = i3.matmul(&a).unwrap();
        for (yi, ai) in y.to_vec().iter().zip(a.to_vec().iter()) {
            assert!((yi - ai).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_against_naive() {
        let a = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::from_vec(&[3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let y = a.matmul(&b).unwrap();
        assert_eq!(y.to_vec(), vec![58., 64., 139., 154.]);
    }

    #[test]
    fn matmul_nt_equals_manual_transpose() {
        let a = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::from_vec(&[4, 3], (0..12).map(|v| v as f64).collect()).unwrap();
        let y = a.matmul_nt(&b).unwrap();
        // manual
        let av = a.to_vec();
        let bv = b.to_vec();
        for i in 0..2 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += av[i * 3 + k] * bv[j * 3 + k];
                }
                assert!((y.to_vec()[i * 4 + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_gradients_flow_to_both_sides() {
        let a = Tensor::<f64>::param(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f64>::param(&[2, 2], vec![5., 6., 7., 8.]).unwrap();
        let loss = a.matmul(&b).unwrap().sum_all().unwrap();
        backward(&loss).unwrap();
        // dA = 1 . B^T, dB = A^T . 1
        assert_eq!(a.grad().unwrap(), vec![11., 15., 11., 15.]);
        assert_eq!(b.grad().unwrap(), vec![4., 4., 6., 6.]);
    }

    #[test]
    fn shape_mismatch_names_operator() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("matmul"));
    }
}
