//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle to a node in a dynamically
//! built computation graph. Operations on tracked tensors record a
//! backward closure; [`backward`] walks the graph once in reverse
//! topological order, accumulates gradients into every reachable tracked
//! tensor, and then releases the graph. A second backward over the same
//! graph is an error - rebuild the forward pass instead.
//!
//! Everything is 64-bit and single-threaded by design: identical inputs
//! and op sequence produce byte-identical results on every platform.

mod ops;
mod shape;

pub use shape::broadcast_shapes;

use crate::error::{Error, Result};
use crate::rng::Rng;
use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
    consumed: bool,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Node>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.inner.borrow();
        write!(f, "Tensor{:?}", n.shape)?;
        if n.data.len() <= 8 {
            write!(f, " {:?}", n.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if shape::numel(shape) != data.len() {
            return Err(Error::InvalidShape {
                op: "from_vec",
                msg: format!("{} values for shape {:?}", data.len(), shape),
            });
        }
        Ok(Tensor::leaf(data, shape.to_vec(), false))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::leaf(vec![0.0; shape::numel(shape)], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::leaf(vec![value; shape::numel(shape)], shape.to_vec(), false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::leaf(vec![value], vec![], false)
    }

    /// Leaf with entries drawn uniformly from (-a, a), a = 1/sqrt(fan_in).
    pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
        let a = 1.0 / (fan_in as f64).sqrt();
        let data = (0..shape::numel(shape))
            .map(|_| rng.uniform_in(-a, a))
            .collect();
        Tensor::leaf(data, shape.to_vec(), false)
    }

    fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(RefCell::new(Node {
                data,
                shape,
                requires_grad,
                grad: None,
                parents: Vec::new(),
                backward: None,
                consumed: false,
            })),
        }
    }

    pub(crate) fn result(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        let tracked = !parents.is_empty();
        Tensor {
            inner: Rc::new(RefCell::new(Node {
                data,
                shape,
                requires_grad: tracked,
                grad: None,
                parents,
                backward: if tracked { backward } else { None },
                consumed: false,
            })),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Mark a leaf as a differentiation target. Call before building graphs.
    pub fn set_requires_grad(&self, value: bool) {
        self.inner.borrow_mut().requires_grad = value;
    }

    pub fn with_grad(self) -> Tensor {
        self.set_requires_grad(true);
        self
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        Ref::map(self.inner.borrow(), |n| &n.data)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let n = self.inner.borrow();
        assert_eq!(n.data.len(), 1, "item() on tensor of {} elements", n.data.len());
        n.data[0]
    }

    pub fn get(&self, flat: usize) -> f64 {
        self.inner.borrow().data[flat]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn clear_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite the stored values in place; shape must match. Used by
    /// checkpoint loading and the optimizer.
    pub fn set_data(&self, data: &[f64]) -> Result<()> {
        let mut n = self.inner.borrow_mut();
        if data.len() != n.data.len() {
            return Err(Error::InvalidShape {
                op: "set_data",
                msg: format!("{} values for shape {:?}", data.len(), n.shape),
            });
        }
        n.data.copy_from_slice(data);
        Ok(())
    }

    /// Copy of the values as an untracked leaf.
    pub fn detach(&self) -> Tensor {
        let n = self.inner.borrow();
        Tensor::leaf(n.data.clone(), n.shape.clone(), false)
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        let mut n = self.inner.borrow_mut();
        let len = n.data.len();
        debug_assert_eq!(contribution.len(), len);
        let g = n.grad.get_or_insert_with(|| vec![0.0; len]);
        for (gi, ci) in g.iter_mut().zip(contribution) {
            *gi += ci;
        }
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }
}

/// Reverse-mode sweep from a scalar loss. Populates `grad` on every
/// reachable tensor with `requires_grad`, then releases the graph.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::Autograd(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if loss.inner.borrow().consumed {
        return Err(Error::Autograd(
            "graph already consumed by a previous backward; rerun the forward pass".into(),
        ));
    }

    // Iterative DFS post-order; reversed it yields loss-first topological order.
    let mut order: Vec<Tensor> = Vec::new();
    let mut seen: HashSet<usize> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(loss.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !seen.insert(node.ptr_id()) {
            continue;
        }
        stack.push((node.clone(), true));
        for p in node.inner.borrow().parents.iter() {
            if !seen.contains(&p.ptr_id()) {
                stack.push((p.clone(), false));
            }
        }
    }

    loss.accumulate_grad(&[1.0]);
    for node in order.iter().rev() {
        let (bw, grad) = {
            let mut n = node.inner.borrow_mut();
            n.consumed = true;
            (n.backward.take(), n.grad.clone())
        };
        if let Some(bw) = bw {
            let g = grad.unwrap_or_else(|| vec![0.0; node.numel()]);
            bw(&g);
        }
        node.inner.borrow_mut().parents.clear();
    }
    Ok(())
}

/// SGD with classical momentum: v <- momentum*v + grad, p <- p - lr*v.
/// Velocity is positional, so pass the same parameter list every step.
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Sgd {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        for (i, p) in params.iter().enumerate() {
            let grad = p.grad().ok_or_else(|| {
                Error::Autograd(format!("sgd_step: parameter {i} has no gradient"))
            })?;
            let v = &mut self.velocity[i];
            let mut n = p.inner.borrow_mut();
            for j in 0..n.data.len() {
                v[j] = self.momentum * v[j] + grad[j];
                n.data[j] -= self.lr * v[j];
            }
            n.grad = None;
        }
        Ok(())
    }
}
