//! Dense tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are immutable row-major value buffers plus an optional gradient
//! buffer. Every operation records a backward closure when any input is
//! tracked, so calling [`Tensor::backward`] on a scalar output accumulates
//! gradients into all tracked ancestors. A computation graph lives on one
//! thread; parameters persist across graphs because handles are reference
//! counted.

mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, GradCheckError};
pub use ops::{concat_cols, concat_vecs, stack_rows};
pub(crate) use ops::uniform01;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects {expected}, got shape {got:?}")]
    BadRank {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type BackFn<T> = Box<dyn Fn(&[T])>;

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    values: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackFn<T>>,
}

/// Handle to one node of a computation graph.
pub struct Tensor<T: Scalar> {
    node: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn new_node(
        shape: Vec<usize>,
        values: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackFn<T>>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), values.len(), "shape/value count mismatch");
        Tensor {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                backward,
            }),
        }
    }

    /// Untracked tensor (no gradient flows into it).
    pub fn constant(shape: Vec<usize>, values: Vec<T>) -> Self {
        Self::new_node(shape, values, false, Vec::new(), None)
    }

    /// Tracked leaf; gradients accumulate here across backward passes.
    pub fn parameter(shape: Vec<usize>, values: Vec<T>) -> Self {
        Self::new_node(shape, values, true, Vec::new(), None)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self::constant(shape, vec![T::zero(); n])
    }

    pub fn scalar(v: T) -> Self {
        Self::constant(vec![1], vec![v])
    }

    /// Interior node produced by an op. Records the backward closure only
    /// when some parent is tracked; otherwise the result is a plain constant
    /// and the graph edge is dropped.
    pub(crate) fn from_op<F>(
        shape: Vec<usize>,
        values: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: F,
    ) -> Self
    where
        F: Fn(&[T]) + 'static,
    {
        let tracked = parents.iter().any(|p| p.node.requires_grad);
        if tracked {
            Self::new_node(shape, values, true, parents, Some(Box::new(backward)))
        } else {
            Self::constant(shape, values)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.node.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn values(&self) -> Ref<'_, Vec<T>> {
        self.node.values.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.values.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.node.values.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Overwrite the stored values in place. Used by optimizers and
    /// checkpoint loading; the shape stays fixed.
    pub fn set_values(&self, values: &[T]) {
        let mut v = self.node.values.borrow_mut();
        assert_eq!(v.len(), values.len(), "set_values length mismatch");
        v.copy_from_slice(values);
    }

    pub(crate) fn accum_grad(&self, delta: &[T]) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta.iter()) {
                    *gi += *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Run reverse-mode differentiation from a scalar output. Gradients
    /// accumulate into every tracked ancestor (call [`Tensor::zero_grad`]
    /// on parameters between steps).
    pub fn backward(&self) {
        assert_eq!(self.numel(), 1, "backward() needs a scalar output");
        if !self.node.requires_grad {
            return;
        }
        let order = self.topo_order();
        self.accum_grad(&[T::one()]);
        for t in order.iter().rev() {
            if let Some(back) = &t.node.backward {
                let g = t.node.grad.borrow().clone();
                if let Some(g) = g {
                    back(&g);
                }
            }
        }
    }

    /// Post-order over parents: every node appears after all its parents,
    /// so the reversed list visits consumers before producers.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        // Iterative DFS; stack holds (node, next-parent-index).
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.node.id);
        while let Some((t, idx)) = stack.pop() {
            if idx < t.node.parents.len() {
                let parent = t.node.parents[idx].clone();
                stack.push((t, idx + 1));
                if parent.node.requires_grad && seen.insert(parent.node.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(t);
            }
        }
        order
    }
}

/// Named tracked tensor; the unit a model registers and a checkpoint stores.
#[derive(Clone)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        Parameter {
            name: name.into(),
            tensor,
        }
    }
}
