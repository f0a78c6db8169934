//! Embedding lookup: gather rows of a table by index.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{Backward, Node, Tensor};

struct EmbeddingBack {
    indices: Vec<usize>,
    rows: usize,
    dim: usize,
}

impl<S: Scalar> Backward<S> for EmbeddingBack {
    fn backward(&self, _node: &Node<S>, parents: &[Tensor<S>], g: &[S]) {
        if parents[0].requires_grad() {
            let mut dtable = vec![S::zero(); self.rows * self.dim];
            for (r, &idx) in self.indices.iter().enumerate() {
                let src = r * self.dim;
                let dst = idx * self.dim;
                for j in 0..self.dim {
                    dtable[dst + j] += g[src + j];
                }
            }
            parents[0].accumulate_grad(&dtable);
        }
    }
}

/// Gather `table[idx]` for each index: `(V, D)` with `N` indices -> `(N, D)`.
pub fn embedding<S: Scalar>(table: &Tensor<S>, indices: &[usize]) -> Result<Tensor<S>> {
    let shape = table.shape();
    if shape.len() != 2 {
        return Err(TensorError::shape("embedding", format!("table {shape:?}, expected (V, D)")));
    }
    let (rows, dim) = (shape[0], shape[1]);
    if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
        return Err(TensorError::arg("embedding", format!("index {bad} out of range (V = {rows})")));
    }
    let d = table.data();
    let mut out = Vec::with_capacity(indices.len() * dim);
    for &idx in indices {
        out.extend_from_slice(&d[idx * dim..(idx + 1) * dim]);
    }
    drop(d);
    Ok(Tensor::from_op(
        vec![indices.len(), dim],
        out,
        "embedding",
        vec![table.clone()],
        Box::new(EmbeddingBack { indices: indices.to_vec(), rows, dim }),
    ))
}

#[cfg(test)]
mod tests {
    use super::embedding;
    use crate::tape::backward;
    use crate::tensor::Tensor;

    #[test]
    fn gathers_rows_and_scatters_gradient() {
        let table = Tensor::<f64>::param(&[3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let y = embedding(&table, &[2, 0, 2]).unwrap();
        assert_eq!(y.to_vec(), vec![5., 6., 1., 2., 5., 6.]);
        let loss = y.sum_all().unwrap();
        backward(&loss).unwrap();
        assert_eq!(table.grad().unwrap(), vec![1., 1., 0., 0., 2., 2.]);
    }

    #[test]
    fn out_of_range_index_errors() {
        let table = Tensor::<f64>::zeros(&[3, 2]);
        assert!(embedding(&table, &[3]).is_err());
    }
}
