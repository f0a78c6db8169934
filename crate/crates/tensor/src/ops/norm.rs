//! Layer normalization and 1D batch normalization.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{Backward, Node, Tensor};

struct LayerNormBack<S> {
    last: usize,
    // per-row statistics saved from the forward pass
    mean: Vec<S>,
    inv_std: Vec<S>,
}

impl<S: Scalar> Backward<S> for LayerNormBack<S> {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        let (x, gamma, _beta) = (&parents[0], &parents[1], &parents[2]);
        let d = self.last;
        let rows = g.len() / d;
        let inv_d = S::one() / S::from_f64(d as f64);
        let xd = x.data();
        let gm = gamma.data();

        let mut dx = if x.requires_grad() { vec![S::zero(); xd.len()] } else { Vec::new() };
        let mut dgamma = vec![S::zero(); d];
        let mut dbeta = vec![S::zero(); d];

        for r in 0..rows {
            let span = r * d..(r + 1) * d;
            let xr = &xd[span.clone()];
            let gr = &g[span.clone()];
            let inv_std = self.inv_std[r];
            let mean = self.mean[r];

            // dy scaled by gamma, and the two row means needed for dx
            let mut m1 = S::zero();
            let mut m2 = S::zero();
            for j in 0..d {
                let xhat = (xr[j] - mean) * inv_std;
                let gg = gr[j] * gm[j];
                m1 += gg;
                m2 += gg * xhat;
                dgamma[j] += gr[j] * xhat;
                dbeta[j] += gr[j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            if x.requires_grad() {
                let dxr = &mut dx[span];
                for j in 0..d {
                    let xhat = (xr[j] - mean) * inv_std;
                    dxr[j] = (gr[j] * gm[j] - m1 - xhat * m2) * inv_std;
                }
            }
        }
        drop(xd);
        drop(gm);
        if x.requires_grad() {
            x.accumulate_grad(&dx);
        }
        if gamma.requires_grad() {
            gamma.accumulate_grad(&dgamma);
        }
        if parents[2].requires_grad() {
            parents[2].accumulate_grad(&dbeta);
        }
    }
}

/// Batch-norm backward over `(B, C, L)`, normalizing each channel across the
/// `B*L` samples that were used to form the batch statistics.
struct BatchNormBack<S> {
    channels: usize,
    spatial: usize,
    mean: Vec<S>,
    inv_std: Vec<S>,
}

impl<S: Scalar> Backward<S> for BatchNormBack<S> {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        let (x, gamma, _beta) = (&parents[0], &parents[1], &parents[2]);
        let c_total = self.channels;
        let l = self.spatial;
        let batch = g.len() / (c_total * l);
        let count = S::from_f64((batch * l) as f64);
        let xd = x.data();
        let gm = gamma.data();

        let mut dgamma = vec![S::zero(); c_total];
        let mut dbeta = vec![S::zero(); c_total];
        // per-channel sums of g and g*xhat
        for b in 0..batch {
            for c in 0..c_total {
                let base = (b * c_total + c) * l;
                let mean = self.mean[c];
                let inv_std = self.inv_std[c];
                for j in 0..l {
                    let xhat = (xd[base + j] - mean) * inv_std;
                    dgamma[c] += g[base + j] * xhat;
                    dbeta[c] += g[base + j];
                }
            }
        }
        if x.requires_grad() {
            let mut dx = vec![S::zero(); xd.len()];
            for b in 0..batch {
                for c in 0..c_total {
                    let base = (b * c_total + c) * l;
                    let mean = self.mean[c];
                    let inv_std = self.inv_std[c];
                    let m1 = dbeta[c] / count;
                    let m2 = dgamma[c] / count;
                    let scale = gm[c] * inv_std;
                    for j in 0..l {
                        let xhat = (xd[base + j] - mean) * inv_std;
                        dx[base + j] = scale * (g[base + j] - m1 - xhat * m2);
                    }
                }
            }
            drop(xd);
            x.accumulate_grad(&dx);
        } else {
            drop(xd);
        }
        drop(gm);
        if gamma.requires_grad() {
            gamma.accumulate_grad(&dgamma);
        }
        if parents[2].requires_grad() {
            parents[2].accumulate_grad(&dbeta);
        }
    }
}

fn check_affine<S: Scalar>(
    op: &'static str,
    dim: usize,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
) -> Result<()> {
    if gamma.shape() != [dim] || beta.shape() != [dim] {
        return Err(TensorError::shape(
            op,
            format!("gamma {:?} / beta {:?}, expected [{dim}]", gamma.shape(), beta.shape()),
        ));
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    /// Layer normalization over the last axis with learnable scale and shift.
    pub fn layer_norm(&self, gamma: &Tensor<S>, beta: &Tensor<S>, eps: f64) -> Result<Tensor<S>> {
        let Some(&d) = self.shape().last() else {
            return Err(TensorError::arg("layer_norm", "scalar input"));
        };
        check_affine("layer_norm", d, gamma, beta)?;
        let rows = self.numel() / d;
        let inv_d = S::one() / S::from_f64(d as f64);
        let epsv = S::from_f64(eps);

        let xd = self.data();
        let gm = gamma.data();
        let bt = beta.data();
        let mut out = vec![S::zero(); xd.len()];
        let mut means = vec![S::zero(); rows];
        let mut inv_stds = vec![S::zero(); rows];
        for r in 0..rows {
            let xr = &xd[r * d..(r + 1) * d];
            let mean = xr.iter().copied().sum::<S>() * inv_d;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
            let inv_std = S::one() / (var + epsv).sqrt();
            means[r] = mean;
            inv_stds[r] = inv_std;
            let or = &mut out[r * d..(r + 1) * d];
            for j in 0..d {
                or[j] = (xr[j] - mean) * inv_std * gm[j] + bt[j];
            }
        }
        drop(xd);
        drop(gm);
        drop(bt);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            "layer_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(LayerNormBack { last: d, mean: means, inv_std: inv_stds }),
        ))
    }

    /// Batch normalization over `(B, C, L)` using batch statistics, updating
    /// running statistics in place:
    /// `running = momentum * running + (1 - momentum) * batch` (biased
    /// variance throughout).
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_train(
        &self,
        gamma: &Tensor<S>,
        beta: &Tensor<S>,
        running_mean: &mut [S],
        running_var: &mut [S],
        momentum: f64,
        eps: f64,
    ) -> Result<Tensor<S>> {
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(TensorError::shape("batch_norm", format!("expected (B,C,L), got {shape:?}")));
        }
        let (b, c, l) = (shape[0], shape[1], shape[2]);
        check_affine("batch_norm", c, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::shape("batch_norm", "running stats length != channels".to_string()));
        }
        let count = S::from_f64((b * l) as f64);
        let epsv = S::from_f64(eps);
        let xd = self.data();

        let mut mean = vec![S::zero(); c];
        let mut var = vec![S::zero(); c];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * l;
                for j in 0..l {
                    mean[ci] += xd[base + j];
                }
            }
        }
        for m in mean.iter_mut() {
            *m = *m / count;
        }
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * l;
                for j in 0..l {
                    let dlt = xd[base + j] - mean[ci];
                    var[ci] += dlt * dlt;
                }
            }
        }
        for v in var.iter_mut() {
            *v = *v / count;
        }

        let mom = S::from_f64(momentum);
        let one_m = S::one() - mom;
        for ci in 0..c {
            running_mean[ci] = mom * running_mean[ci] + one_m * mean[ci];
            running_var[ci] = mom * running_var[ci] + one_m * var[ci];
        }

        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + epsv).sqrt()).collect();
        let gm = gamma.data();
        let bt = beta.data();
        let mut out = vec![S::zero(); xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * l;
                let scale = gm[ci] * inv_std[ci];
                let shift = bt[ci] - mean[ci] * scale;
                for j in 0..l {
                    out[base + j] = xd[base + j] * scale + shift;
                }
            }
        }
        drop(xd);
        drop(gm);
        drop(bt);
        Ok(Tensor::from_op(
            shape.to_vec(),
            out,
            "batch_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(BatchNormBack { channels: c, spatial: l, mean, inv_std }),
        ))
    }

    /// Batch normalization with frozen statistics; deterministic.
    pub fn batch_norm_eval(
        &self,
        gamma: &Tensor<S>,
        beta: &Tensor<S>,
        running_mean: &[S],
        running_var: &[S],
        eps: f64,
    ) -> Result<Tensor<S>> {
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(TensorError::shape("batch_norm", format!("expected (B,C,L), got {shape:?}")));
        }
        let (b, c, l) = (shape[0], shape[1], shape[2]);
        check_affine("batch_norm", c, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::shape("batch_norm", "running stats length != channels".to_string()));
        }
        let epsv = S::from_f64(eps);
        let xd = self.data();
        let gm = gamma.data();
        let bt = beta.data();
        let mut out = vec![S::zero(); xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * l;
                let inv_std = S::one() / (running_var[ci] + epsv).sqrt();
                let scale = gm[ci] * inv_std;
                let shift = bt[ci] - running_mean[ci] * scale;
                for j in 0..l {
                    out[base + j] = xd[base + j] * scale + shift;
                }
            }
        }
        drop(xd);
        drop(gm);
        drop(bt);
        // Frozen statistics are constants; gradients flow to x/gamma/beta the
        // same way as an affine map. Reuse the train rule with fixed stats.
        let inv_std: Vec<S> =
            running_var.iter().map(|&v| S::one() / (v + epsv).sqrt()).collect();
        Ok(Tensor::from_op(
            shape.to_vec(),
            out,
            "batch_norm_eval",
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(EvalBnBack { channels: c, spatial: l, mean: running_mean.to_vec(), inv_std }),
        ))
    }
}

/// Eval-mode batch norm is an affine map per channel; its backward does not
/// couple samples.
struct EvalBnBack<S> {
    channels: usize,
    spatial: usize,
    mean: Vec<S>,
    inv_std: Vec<S>,
}

impl<S: Scalar> Backward<S> for EvalBnBack<S> {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        let (x, gamma, _beta) = (&parents[0], &parents[1], &parents[2]);
        let c_total = self.channels;
        let l = self.spatial;
        let batch = g.len() / (c_total * l);
        let gm = gamma.data();

        if x.requires_grad() {
            let mut dx = vec![S::zero(); g.len()];
            for b in 0..batch {
                for c in 0..c_total {
                    let base = (b * c_total + c) * l;
                    let scale = gm[c] * self.inv_std[c];
                    for j in 0..l {
                        dx[base + j] = g[base + j] * scale;
                    }
                }
            }
            x.accumulate_grad(&dx);
        }
        if gamma.requires_grad() || parents[2].requires_grad() {
            let xd = x.data();
            let mut dgamma = vec![S::zero(); c_total];
            let mut dbeta = vec![S::zero(); c_total];
            for b in 0..batch {
                for c in 0..c_total {
                    let base = (b * c_total + c) * l;
                    for j in 0..l {
                        let xhat = (xd[base + j] - self.mean[c]) * self.inv_std[c];
                        dgamma[c] += g[base + j] * xhat;
                        dbeta[c] += g[base + j];
                    }
                }
            }
            drop(xd);
            if gamma.requires_grad() {
                gamma.accumulate_grad(&dgamma);
            }
            if parents[2].requires_grad() {
                parents[2].accumulate_grad(&dbeta);
            }
        }
        drop(gm);
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::Tensor;

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let x = Tensor::<f64>::from_vec(&[2, 4], vec![1., 2., 3., 4., -1., 0., 5., 2.]).unwrap();
        let gamma = Tensor::from_vec(&[4], vec![1.0; 4]).unwrap();
        let beta = Tensor::from_vec(&[4], vec![0.0; 4]).unwrap();
        let y = x.layer_norm(&gamma, &beta, 1e-12).unwrap();
        let v = y.to_vec();
        for r in 0..2 {
            let row = &v[r * 4..(r + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|&a| (a - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_norm_eval_is_deterministic_affine() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let gamma = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let beta = Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        let rm = vec![2.0, 5.0];
        let rv = vec![1.0, 4.0];
        let y1 = x.batch_norm_eval(&gamma, &beta, &rm, &rv, 0.0).unwrap().to_vec();
        let y2 = x.batch_norm_eval(&gamma, &beta, &rm, &rv, 0.0).unwrap().to_vec();
        assert_eq!(y1, y2);
        assert!((y1[0] + 1.0).abs() < 1e-12); // (1-2)/1
        assert!((y1[3] - 0.0).abs() < 1e-12); // 2*(4-5)/2 + 1
    }

    #[test]
    fn batch_norm_train_updates_running_stats() {
        let x = Tensor::<f64>::from_vec(&[2, 1, 2], vec![1., 3., 5., 7.]).unwrap();
        let gamma = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let beta = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut rm = vec![0.0];
        let mut rv = vec![1.0];
        let _ = x.batch_norm_train(&gamma, &beta, &mut rm, &mut rv, 0.5, 1e-5).unwrap();
        // batch mean 4, biased var 5
        assert!((rm[0] - 2.0).abs() < 1e-12);
        assert!((rv[0] - 3.0).abs() < 1e-12);
    }
}
