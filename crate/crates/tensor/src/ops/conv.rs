//! 1D convolution (im2col + gemm) and max pooling.

use crate::error::{Result, TensorError};
use crate::ops::matmul::gemm_into;
use crate::scalar::Scalar;
use crate::tensor::{Backward, Node, Tensor};

#[allow(clippy::too_many_arguments)]
fn gemm_strided<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    a_off: usize,
    rsa: isize,
    csa: isize,
    b: &[S],
    b_off: usize,
    rsb: isize,
    csb: isize,
    beta: S,
    c: &mut [S],
    c_off: usize,
    rsc: isize,
    csc: isize,
) {
    unsafe {
        S::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(a_off),
            rsa,
            csa,
            b.as_ptr().add(b_off),
            rsb,
            csb,
            beta,
            c.as_mut_ptr().add(c_off),
            rsc,
            csc,
        );
    }
}

struct Conv1dDims {
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    l_out: usize,
}

/// col has shape `(c_in * kernel, batch * l_out)` row-major.
fn im2col<S: Scalar>(x: &[S], d: &Conv1dDims) -> Vec<S> {
    let cols = d.batch * d.l_out;
    let mut col = vec![S::zero(); d.c_in * d.kernel * cols];
    for b in 0..d.batch {
        for ci in 0..d.c_in {
            let x_base = (b * d.c_in + ci) * d.len;
            for kk in 0..d.kernel {
                let row = ci * d.kernel + kk;
                let out_base = row * cols + b * d.l_out;
                for l in 0..d.l_out {
                    let pos = l * d.stride + kk;
                    if pos >= d.padding && pos - d.padding < d.len {
                        col[out_base + l] = x[x_base + pos - d.padding];
                    }
                }
            }
        }
    }
    col
}

struct Conv1dBack {
    dims: Conv1dDims,
    has_bias: bool,
}

impl<S: Scalar> Backward<S> for Conv1dBack {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        let d = &self.dims;
        let x = &parents[0];
        let w = &parents[1];
        let cols = d.batch * d.l_out;
        let ck = d.c_in * d.kernel;

        if self.has_bias && parents[2].requires_grad() {
            let mut dbias = vec![S::zero(); d.c_out];
            for b in 0..d.batch {
                for co in 0..d.c_out {
                    let base = (b * d.c_out + co) * d.l_out;
                    for l in 0..d.l_out {
                        dbias[co] += g[base + l];
                    }
                }
            }
            parents[2].accumulate_grad(&dbias);
        }

        if d.kernel == 1 && d.padding == 0 {
            // No im2col needed: per-sample strided gemms.
            let xd = x.data();
            if w.requires_grad() {
                let mut dw = vec![S::zero(); d.c_out * d.c_in];
                for b in 0..d.batch {
                    // dW += g_b (c_out, l_out) . x_b^T, x_b read with column stride
                    gemm_strided(
                        d.c_out,
                        d.l_out,
                        d.c_in,
                        S::one(),
                        g,
                        b * d.c_out * d.l_out,
                        d.l_out as isize,
                        1,
                        &xd,
                        b * d.c_in * d.len,
                        d.stride as isize,
                        d.len as isize,
                        S::one(),
                        &mut dw,
                        0,
                        d.c_in as isize,
                        1,
                    );
                }
                w.accumulate_grad(&dw);
            }
            if x.requires_grad() {
                let wd = w.data();
                let mut dx = vec![S::zero(); xd.len()];
                for b in 0..d.batch {
                    // dx_b[:, l*stride] = W^T . g_b
                    gemm_strided(
                        d.c_in,
                        d.c_out,
                        d.l_out,
                        S::one(),
                        &wd,
                        0,
                        1,
                        d.c_in as isize,
                        g,
                        b * d.c_out * d.l_out,
                        d.l_out as isize,
                        1,
                        S::zero(),
                        &mut dx,
                        b * d.c_in * d.len,
                        d.len as isize,
                        d.stride as isize,
                    );
                }
                drop(xd);
                drop(wd);
                x.accumulate_grad(&dx);
            }
            return;
        }

        // Rearrange g (B, c_out, l_out) into (c_out, B*l_out).
        let mut gbuf = vec![S::zero(); d.c_out * cols];
        for b in 0..d.batch {
            for co in 0..d.c_out {
                let src = (b * d.c_out + co) * d.l_out;
                let dst = co * cols + b * d.l_out;
                gbuf[dst..dst + d.l_out].copy_from_slice(&g[src..src + d.l_out]);
            }
        }

        // The col matrix is recomputed rather than kept from the forward
        // pass; it is the largest transient buffer in the network.
        let col = im2col(&x.data(), d);

        if w.requires_grad() {
            let mut dw = vec![S::zero(); d.c_out * ck];
            gemm_into(&gbuf, false, &col, true, d.c_out, cols, ck, S::one(), S::zero(), &mut dw);
            w.accumulate_grad(&dw);
        }

        if x.requires_grad() {
            let mut dcol = vec![S::zero(); ck * cols];
            gemm_into(&w.data(), true, &gbuf, false, ck, d.c_out, cols, S::one(), S::zero(), &mut dcol);
            // col2im
            let mut dx = vec![S::zero(); d.batch * d.c_in * d.len];
            for b in 0..d.batch {
                for ci in 0..d.c_in {
                    let x_base = (b * d.c_in + ci) * d.len;
                    for kk in 0..d.kernel {
                        let row = ci * d.kernel + kk;
                        let src_base = row * cols + b * d.l_out;
                        for l in 0..d.l_out {
                            let pos = l * d.stride + kk;
                            if pos >= d.padding && pos - d.padding < d.len {
                                dx[x_base + pos - d.padding] += dcol[src_base + l];
                            }
                        }
                    }
                }
            }
            x.accumulate_grad(&dx);
        }
    }
}

struct MaxPoolBack {
    argmax: Vec<usize>, // flat index into the input per output element
    input_len: usize,
}

impl<S: Scalar> Backward<S> for MaxPoolBack {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            let mut dx = vec![S::zero(); self.input_len];
            for (&idx, &gi) in self.argmax.iter().zip(g) {
                dx[idx] += gi;
            }
            parents[0].accumulate_grad(&dx);
        }
    }
}

impl<S: Scalar> Tensor<S> {
    /// 1D convolution: `x (B, C_in, L)` with `w (C_out, C_in, K)` and
    /// optional `bias (C_out)`; zero padding on both ends.
    pub fn conv1d(
        &self,
        w: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<S>> {
        let xs = self.shape();
        let ws = w.shape();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(TensorError::shape(
                "conv1d",
                format!("x {xs:?} with w {ws:?} (want (B,Cin,L) and (Cout,Cin,K))"),
            ));
        }
        if stride == 0 {
            return Err(TensorError::arg("conv1d", "stride must be positive"));
        }
        let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
        let (c_out, kernel) = (ws[0], ws[2]);
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(TensorError::shape(
                    "conv1d",
                    format!("bias {:?}, expected [{c_out}]", b.shape()),
                ));
            }
        }
        let padded = len + 2 * padding;
        if padded < kernel {
            return Err(TensorError::shape(
                "conv1d",
                format!("kernel {kernel} exceeds padded length {padded}"),
            ));
        }
        let l_out = (padded - kernel) / stride + 1;
        let dims = Conv1dDims { batch, c_in, len, c_out, kernel, stride, padding, l_out };

        let mut out = vec![S::zero(); batch * c_out * l_out];
        {
            let xd = self.data();
            let wd = w.data();
            if kernel == 1 && padding == 0 {
                for b in 0..batch {
                    gemm_strided(
                        c_out,
                        c_in,
                        l_out,
                        S::one(),
                        &wd,
                        0,
                        c_in as isize,
                        1,
                        &xd,
                        b * c_in * len,
                        len as isize,
                        stride as isize,
                        S::zero(),
                        &mut out,
                        b * c_out * l_out,
                        l_out as isize,
                        1,
                    );
                }
            } else {
                let cols = batch * l_out;
                let col = im2col(&xd, &dims);
                let mut tmp = vec![S::zero(); c_out * cols];
                gemm_into(&wd, false, &col, false, c_out, c_in * kernel, cols, S::one(), S::zero(), &mut tmp);
                for b in 0..batch {
                    for co in 0..c_out {
                        let src = co * cols + b * l_out;
                        let dst = (b * c_out + co) * l_out;
                        out[dst..dst + l_out].copy_from_slice(&tmp[src..src + l_out]);
                    }
                }
            }
            if let Some(bt) = bias {
                let bd = bt.data();
                for b in 0..batch {
                    for co in 0..c_out {
                        let base = (b * c_out + co) * l_out;
                        for v in out[base..base + l_out].iter_mut() {
                            *v += bd[co];
                        }
                    }
                }
            }
        }

        let mut parents = vec![self.clone(), w.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            vec![batch, c_out, l_out],
            out,
            "conv1d",
            parents,
            Box::new(Conv1dBack { dims, has_bias: bias.is_some() }),
        ))
    }

    /// Max pooling over the last axis of `(B, C, L)`. Ties resolve to the
    /// earliest position.
    pub fn max_pool1d(&self, pool: usize, stride: usize) -> Result<Tensor<S>> {
        let xs = self.shape();
        if xs.len() != 3 {
            return Err(TensorError::shape("max_pool1d", format!("expected (B,C,L), got {xs:?}")));
        }
        if pool == 0 || stride == 0 || xs[2] < pool {
            return Err(TensorError::arg(
                "max_pool1d",
                format!("pool {pool} / stride {stride} on length {}", xs[2]),
            ));
        }
        let (batch, c, len) = (xs[0], xs[1], xs[2]);
        let l_out = (len - pool) / stride + 1;
        let xd = self.data();
        let mut out = vec![S::zero(); batch * c * l_out];
        let mut argmax = vec![0usize; out.len()];
        for b in 0..batch {
            for ci in 0..c {
                let base = (b * c + ci) * len;
                let obase = (b * c + ci) * l_out;
                for l in 0..l_out {
                    let start = base + l * stride;
                    let mut best = xd[start];
                    let mut best_idx = start;
                    for j in 1..pool {
                        let v = xd[start + j];
                        if v > best {
                            best = v;
                            best_idx = start + j;
                        }
                    }
                    out[obase + l] = best;
                    argmax[obase + l] = best_idx;
                }
            }
        }
        drop(xd);
        Ok(Tensor::from_op(
            vec![batch, c, l_out],
            out,
            "max_pool1d",
            vec![self.clone()],
            Box::new(MaxPoolBack { argmax, input_len: batch * c * len }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::Tensor;

    /// Naive sliding dot product; the independent oracle for conv1d.
    pub fn conv1d_naive(
        x: &[f64],
        (b, c_in, l): (usize, usize, usize),
        w: &[f64],
        (c_out, kernel): (usize, usize),
        bias: Option<&[f64]>,
        stride: usize,
        padding: usize,
    ) -> Vec<f64> {
        let l_out = (l + 2 * padding - kernel) / stride + 1;
        let mut out = vec![0.0; b * c_out * l_out];
        for bi in 0..b {
            for co in 0..c_out {
                for lo in 0..l_out {
                    let mut acc = bias.map_or(0.0, |bv| bv[co]);
                    for ci in 0..c_in {
                        for kk in 0..kernel {
                            let pos = lo * stride + kk;
                            if pos >= padding && pos - padding < l {
                                acc += x[(bi * c_in + ci) * l + pos - padding]
                                    * w[(co * c_in + ci) * kernel + kk];
                            }
                        }
                    }
                    out[(bi * c_out + co) * l_out + lo] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv1d_matches_naive_oracle() {
        // length-10 input, kernel 3, stride 1, no padding -> length 8
        let x: Vec<f64> = (0..10).map(|v| (v as f64 * 0.7).sin()).collect();
        let w: Vec<f64> = vec![0.5, -1.0, 0.25, 0.1, 0.2, -0.3];
        let xt = Tensor::from_vec(&[1, 1, 10], x.clone()).unwrap();
        let wt = Tensor::from_vec(&[2, 1, 3], w.clone()).unwrap();
        let y = xt.conv1d(&wt, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 8]);
        let oracle = conv1d_naive(&x, (1, 1, 10), &w, (2, 3), None, 1, 0);
        for (a, b) in y.to_vec().iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_padding_and_stride_match_naive() {
        let x: Vec<f64> = (0..24).map(|v| (v as f64 * 1.3).cos()).collect();
        let w: Vec<f64> = (0..24).map(|v| v as f64 * 0.1 - 1.0).collect();
        let bias = vec![0.3, -0.6];
        let xt = Tensor::from_vec(&[2, 2, 6], x.clone()).unwrap();
        let wt = Tensor::from_vec(&[2, 2, 3], w[..12].to_vec()).unwrap();
        let bt = Tensor::from_vec(&[2], bias.clone()).unwrap();
        let y = xt.conv1d(&wt, Some(&bt), 2, 1).unwrap();
        let oracle = conv1d_naive(&x, (2, 2, 6), &w[..12], (2, 3), Some(&bias), 2, 1);
        assert_eq!(y.to_vec().len(), oracle.len());
        for (a, b) in y.to_vec().iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pointwise_conv_matches_naive() {
        let x: Vec<f64> = (0..30).map(|v| (v as f64).sqrt()).collect();
        let w: Vec<f64> = vec![1.0, -2.0, 0.5, 0.25, 3.0, -0.75];
        let xt = Tensor::from_vec(&[1, 3, 10], x.clone()).unwrap();
        let wt = Tensor::from_vec(&[2, 3, 1], w.clone()).unwrap();
        let y = xt.conv1d(&wt, None, 2, 0).unwrap();
        let oracle = conv1d_naive(&x, (1, 3, 10), &w, (2, 1), None, 2, 0);
        for (a, b) in y.to_vec().iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn max_pool_values_and_shape() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 6], vec![1., 5., 2., 8., 3., 4.]).unwrap();
        let y = x.max_pool1d(2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3]);
        assert_eq!(y.to_vec(), vec![5., 8., 4.]);
    }
}
