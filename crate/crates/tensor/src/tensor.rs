//! The dense tensor type and its autodiff bookkeeping.
//!
//! A [`Tensor`] is a cheaply clonable handle (`Rc`) to an immutable value
//! buffer plus optional gradient state. Operations on tensors record a
//! backward closure on the output node whenever any input participates in
//! gradient computation; [`crate::tape::Tape`] later walks those records in
//! reverse topological order.
//!
//! Tensors are deliberately `!Send`: a forward/backward graph is confined to
//! the thread that built it. Distinct model replicas on distinct threads each
//! build their own graphs.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static NO_GRAD_DEPTH: Cell<u32> = const { Cell::new(0) };
}

/// Run `f` with gradient recording disabled on this thread.
///
/// Forward passes inside the closure produce plain value tensors with no
/// backward records, which keeps evaluation cheap and memory-flat.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    let out = f();
    NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
    out
}

pub(crate) fn grad_enabled() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get()) == 0
}

/// Backward rule of a recorded operation.
///
/// Implementations read the output gradient plus whatever forward state they
/// captured, and accumulate contributions into each parent that requires
/// gradients.
pub(crate) trait Backward<S: Scalar> {
    fn backward(&self, node: &Node<S>, parents: &[Tensor<S>], grad_out: &[S]);
}

pub(crate) struct OpRecord<S: Scalar> {
    #[allow(dead_code)] // kept for debugging backward traversals
    pub(crate) name: &'static str,
    pub(crate) parents: Vec<Tensor<S>>,
    pub(crate) rule: Box<dyn Backward<S>>,
}

pub(crate) struct Node<S: Scalar> {
    pub(crate) id: u64,
    pub(crate) shape: Box<[usize]>,
    pub(crate) data: RefCell<Vec<S>>,
    pub(crate) grad: RefCell<Option<Vec<S>>>,
    pub(crate) requires_grad: bool,
    pub(crate) retain_grad: Cell<bool>,
    pub(crate) op: RefCell<Option<OpRecord<S>>>,
}

/// Dense n-dimensional array participating in reverse-mode gradient
/// computation. Cloning is cheap (reference-counted handle).
pub struct Tensor<S: Scalar>(pub(crate) Rc<Node<S>>);

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<S: Scalar> Tensor<S> {
    fn new_node(
        shape: Vec<usize>,
        data: Vec<S>,
        requires_grad: bool,
        is_leaf: bool,
        op: Option<OpRecord<S>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.into_boxed_slice(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            is_leaf,
            retain_grad: Cell::new(false),
            op: RefCell::new(op),
        }))
    }

    /// A constant tensor: participates in forward math only.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::shape(
                "from_vec",
                format!("shape {:?} wants {} elements, got {}", shape, shape.iter().product::<usize>(), data.len()),
            ));
        }
        Ok(Self::new_node(shape.to_vec(), data, false, true, None))
    }

    /// A trainable leaf (model parameter). Gradients accumulate here.
    pub fn param(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::shape(
                "param",
                format!("shape {:?} wants {} elements, got {}", shape, shape.iter().product::<usize>(), data.len()),
            ));
        }
        Ok(Self::new_node(shape.to_vec(), data, true, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new_node(shape.to_vec(), vec![S::zero(); n], false, true, None)
    }

    pub fn scalar(v: S) -> Self {
        Self::new_node(vec![], vec![v], false, true, None)
    }

    /// Output of an operation. Records the backward rule when gradients are
    /// enabled and some input requires them.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<S>,
        name: &'static str,
        parents: Vec<Tensor<S>>,
        rule: Box<dyn Backward<S>>,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.0.requires_grad);
        if track {
            Self::new_node(shape, data, true, false, Some(OpRecord { name, parents, rule }))
        } else {
            Self::new_node(shape, data, false, true, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Borrow the value buffer (row-major).
    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.0.data.borrow()
    }

    /// Mutable access to the value buffer. Intended for leaf parameters
    /// (optimizer updates); mutating an interior node invalidates any
    /// recorded backward state that reads it.
    pub fn data_mut(&self) -> RefMut<'_, Vec<S>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.0.data.borrow().clone()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.0.data.borrow()[0]
    }

    /// Current gradient, if one has been populated by a backward pass.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Keep this node's gradient after backward even though it is not a leaf
    /// (used by activation-tap consumers such as Grad-CAM).
    pub fn retain_grad(&self) {
        self.0.retain_grad.set(true);
    }

    pub(crate) fn node(&self) -> &Node<S> {
        &self.0
    }

    pub(crate) fn accumulate_grad(&self, contrib: &[S]) {
        debug_assert_eq!(contrib.len(), self.numel());
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += *ci;
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    pub(crate) fn take_grad_vec(&self) -> Option<Vec<S>> {
        self.0.grad.borrow_mut().take()
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

// Graphs can form long chains (e.g. recurrent nets unrolled over hundreds of
// steps). Dropping such a chain recursively would overflow the stack, so the
// parent links are unwound iteratively.
impl<S: Scalar> Drop for Node<S> {
    fn drop(&mut self) {
        let mut worklist: Vec<OpRecord<S>> = Vec::new();
        if let Some(rec) = self.op.get_mut().take() {
            worklist.push(rec);
        }
        while let Some(rec) = worklist.pop() {
            for parent in rec.parents {
                if let Ok(mut node) = Rc::try_unwrap(parent.0) {
                    if let Some(inner) = node.op.get_mut().take() {
                        worklist.push(inner);
                    }
                    // node drops here with op already detached
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_vs_param_grad_flags() {
        let c = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let p = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(!c.requires_grad());
        assert!(p.requires_grad());
    }

    #[test]
    fn shape_product_checked() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let p = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| p.relu().unwrap());
        assert!(!y.requires_grad());
        assert!(y.0.op.borrow().is_none());
    }

    #[test]
    fn deep_chain_drops_without_overflow() {
        let x = Tensor::<f32>::param(&[4], vec![1.0; 4]).unwrap();
        let mut y = x.clone();
        for _ in 0..200_000 {
            y = y.relu().unwrap();
        }
        drop(y); // must not recurse
    }
}
