use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use super::ops::Op;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Node in a reverse-mode graph. Cloning is cheap (reference counted).
///
/// Nodes that do not require a gradient drop their parents immediately, so a
/// no-grad forward pass frees intermediates as soon as they go out of scope.
pub struct Var<T: Scalar>(Rc<Node<T>>);

pub(crate) struct Node<T: Scalar> {
    pub(crate) value: Tensor<T>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
    pub(crate) grad: RefCell<Option<Vec<T>>>,
}

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.name())
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            value,
            requires_grad,
            op: Op::Leaf,
            grad: RefCell::new(None),
        }))
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    pub(crate) fn from_op(value: Tensor<T>, op: Op<T>) -> Result<Self> {
        value.ensure_finite(op.name())?;
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        let op = if requires_grad { op } else { Op::Leaf };
        Ok(Var(Rc::new(Node {
            value,
            requires_grad,
            op,
            grad: RefCell::new(None),
        })))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0
            .grad
            .borrow()
            .as_ref()
            .map(|g| Tensor::new(self.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn id(&self) -> *const Node<T> {
        Rc::as_ptr(&self.0)
    }

    fn accumulate(&self, g: Vec<T>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar output. Leaf gradients accumulate;
    /// intermediate gradients are released once propagated.
    pub fn backward(&self) -> Result<()> {
        if self.value().numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be a scalar, got shape {:?}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate(vec![T::one()]);
        for node in order.iter().rev() {
            if matches!(node.0.op, Op::Leaf) {
                continue;
            }
            let Some(grad) = node.0.grad.borrow_mut().take() else {
                continue;
            };
            let parents = node.0.op.parents();
            let grads = node.0.op.backward(&grad, &node.0.value)?;
            debug_assert_eq!(parents.len(), grads.len());
            for (parent, g) in parents.into_iter().zip(grads) {
                if let Some(g) = g {
                    if parent.requires_grad() {
                        debug_assert_eq!(g.len(), parent.value().numel());
                        parent.accumulate(g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over nodes that require a gradient.
    fn topo_order(&self) -> Vec<Var<T>> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node<T>> = HashSet::new();
        let mut stack: Vec<(Var<T>, bool)> = vec![(self.clone(), false)];
        while let Some((var, expanded)) = stack.pop() {
            if expanded {
                order.push(var);
                continue;
            }
            if !visited.insert(var.id()) {
                continue;
            }
            stack.push((var.clone(), true));
            for p in var.0.op.parents() {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p, false));
                }
            }
        }
        order
    }
}
