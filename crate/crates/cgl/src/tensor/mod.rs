//! Minimal reverse-mode differentiable tensor engine.
//!
//! Tensors are dense row-major `f64` arrays of rank 1 or 2. Every op records
//! a backward closure on the node it produces; `Tensor::backward` on a scalar
//! walks the graph in reverse topological order and accumulates gradients
//! into every tensor on the path that requires them.

pub mod batchnorm;
pub mod gradcheck;
pub mod ops;
pub mod sparse;

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{dim_err, num_err, val_err, Result};

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Dense real tensor with optional gradient tracking.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<RefCell<Node>>,
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(num_err("non-finite value in tensor"));
    }
    Ok(())
}

impl Tensor {
    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) && numel != values.len() {
            return Err(dim_err("zero extent with nonzero data"));
        }
        if numel != values.len() {
            return Err(dim_err(format!(
                "shape {:?} expects {} values, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Tensor {
            node: Rc::new(RefCell::new(Node {
                shape: shape.to_vec(),
                values,
                grad: None,
                requires_grad: false,
                parents: Vec::new(),
                backward: None,
            })),
        })
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Tensor> {
        Tensor::from_vec(&[rows, cols], values)
    }

    pub fn vector(values: Vec<f64>) -> Result<Tensor> {
        let n = values.len();
        Tensor::from_vec(&[n], values)
    }

    pub fn scalar(v: f64) -> Result<Tensor> {
        Tensor::from_vec(&[1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; numel]).expect("zeros is always valid")
    }

    pub fn requires_grad(self, flag: bool) -> Tensor {
        self.node.borrow_mut().requires_grad = flag;
        self
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.node.borrow().requires_grad
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.borrow().shape.clone()
    }

    /// Row count for rank-2 tensors; length for rank-1.
    pub fn rows(&self) -> usize {
        self.node.borrow().shape[0]
    }

    pub fn cols(&self) -> usize {
        let n = self.node.borrow();
        if n.shape.len() == 2 {
            n.shape[1]
        } else {
            1
        }
    }

    pub fn numel(&self) -> usize {
        self.node.borrow().values.len()
    }

    pub fn values(&self) -> Vec<f64> {
        self.node.borrow().values.clone()
    }

    pub fn item(&self) -> f64 {
        let n = self.node.borrow();
        assert_eq!(n.values.len(), 1, "item() on non-scalar tensor");
        n.values[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.node.borrow_mut().grad = None;
    }

    /// Overwrite stored values in place (same length required). Used by the
    /// optimizer and by finite-difference probing; detaches nothing.
    pub fn set_values(&self, values: &[f64]) -> Result<()> {
        check_finite(values)?;
        let mut n = self.node.borrow_mut();
        if n.values.len() != values.len() {
            return Err(dim_err("set_values length mismatch"));
        }
        n.values.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut n = self.node.borrow_mut();
        debug_assert_eq!(n.values.len(), g.len());
        match &mut n.grad {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => n.grad = Some(g.to_vec()),
        }
    }

    /// Construct an op output node. `backward` receives the output gradient
    /// and must accumulate into the parents it captured.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Result<Tensor> {
        check_finite(&values)?;
        let track = parents.iter().any(|p| {
            let n = p.node.borrow();
            n.requires_grad || n.backward.is_some()
        });
        Ok(Tensor {
            node: Rc::new(RefCell::new(Node {
                shape,
                values,
                grad: None,
                requires_grad: false,
                parents: if track { parents } else { Vec::new() },
                backward: if track { Some(backward) } else { None },
            })),
        })
    }

    /// Reverse-mode pass from a scalar output.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(val_err("backward() requires a scalar tensor"));
        }
        let order = self.topo_order();
        self.accumulate_grad(&[1.0]);
        for t in order.iter().rev() {
            let (grad, has_backward) = {
                let n = t.node.borrow();
                (n.grad.clone(), n.backward.is_some())
            };
            let Some(grad) = grad else { continue };
            if has_backward {
                let n = t.node.borrow();
                let f = n.backward.as_ref().unwrap();
                f(&grad);
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const RefCell<Node>> = HashSet::new();
        // Iterative DFS; deep chains (n error blocks) stay shallow but avoid
        // recursion anyway.
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        seen.insert(Rc::as_ptr(&self.node));
        while let Some((t, idx)) = stack.pop() {
            let next = {
                let n = t.node.borrow();
                n.parents.get(idx).cloned()
            };
            match next {
                Some(p) => {
                    stack.push((t, idx + 1));
                    if seen.insert(Rc::as_ptr(&p.node)) {
                        stack.push((p, 0));
                    }
                }
                None => order.push(t),
            }
        }
        order
    }
}

/// Named trainable tensor.
#[derive(Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Parameter {
        Parameter {
            name: name.into(),
            tensor: tensor.requires_grad(true),
        }
    }
}

/// p <- p - lr * grad for every parameter, then grads are zeroed.
pub fn sgd_step(params: &[Parameter], lr: f64) -> Result<()> {
    for p in params {
        let grad = p
            .tensor
            .grad()
            .ok_or_else(|| val_err(format!("parameter {} has no gradient", p.name)))?;
        let mut v = p.tensor.values();
        for (x, g) in v.iter_mut().zip(&grad) {
            *x -= lr * g;
        }
        p.tensor.set_values(&v)?;
        p.tensor.zero_grad();
    }
    Ok(())
}

/// Drop gradients on a parameter set.
pub fn zero_grads(params: &[Parameter]) {
    for p in params {
        p.tensor.zero_grad();
    }
}
