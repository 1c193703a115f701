//! Dense row-major `f64` tensors with reverse-mode automatic differentiation.
//!
//! Every operation that has at least one gradient-tracking input records a
//! node holding its inputs and a backward closure. [`Tensor::backward`]
//! walks the recorded graph in reverse topological order and accumulates
//! gradients into the trainable leaves. Intermediate gradients are not
//! retained.
//!
//! Tensors are immutable after construction; only the gradient buffer of a
//! leaf changes. Permutations and gathers always materialize a new tensor.

mod kernels;
mod nn;
mod ops;

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use nn::{LabelMap, IGNORE_INDEX};

/// Dimensions of a tensor. All dims are at least one.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(invalid(format!("dimension {pos} of {dims:?} is zero")));
        }
        Ok(Shape(dims))
    }

    pub fn scalar() -> Self {
        Shape(vec![1])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Maps the upstream gradient of a node to one optional gradient per input.
type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    op: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Shape,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// Reference-counted handle to an immutable tensor value.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl Tensor {
    /// Constant tensor (no gradient tracking).
    pub fn new(data: Vec<f64>, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(invalid(format!(
                "shape {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Self::leaf(data, shape, false))
    }

    /// Trainable leaf. Gradients accumulate into it on every backward pass.
    pub fn param(data: Vec<f64>, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let t = Self::new(data, dims)?;
        Ok(Self::leaf(t.data().to_vec(), t.shape().clone(), true))
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf(vec![value], Shape::scalar(), false)
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn ones(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, 1.0)
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Ok(Self::leaf(vec![value; shape.numel()], shape, false))
    }

    pub fn ones_like(other: &Tensor) -> Tensor {
        Self::leaf(vec![1.0; other.numel()], other.shape().clone(), false)
    }

    pub(crate) fn leaf(data: Vec<f64>, shape: Shape, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node: None,
        }))
    }

    /// Builds the result of an operation. A graph node is recorded only if
    /// some input tracks gradients.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<f64>,
        shape: Shape,
        inputs: Vec<Tensor>,
        backward: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let node = requires_grad.then(|| Node {
            op,
            inputs,
            backward: Box::new(backward),
        });
        Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node,
        }))
    }

    pub fn shape(&self) -> &Shape {
        &self.0.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.0.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::NotScalar(self.shape().clone()));
        }
        Ok(self.0.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Name of the producing operation, if any.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.data.clone(), self.0.shape.clone(), false)
    }

    /// New trainable leaf with the same values.
    pub fn to_param(&self) -> Tensor {
        Self::leaf(self.0.data.clone(), self.0.shape.clone(), true)
    }

    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> *const Inner {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar loss. Gradients add onto whatever the
    /// trainable leaves already hold.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NotScalar(self.shape().clone()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut grads: HashMap<*const Inner, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.key()) else {
                continue;
            };
            match &t.0.node {
                Some(node) => {
                    let input_grads = (node.backward)(&g);
                    debug_assert_eq!(input_grads.len(), node.inputs.len());
                    for (input, ig) in node.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel(), "{}", node.op);
                        match grads.get_mut(&input.key()) {
                            Some(acc) => add_into(acc, &ig),
                            None => {
                                grads.insert(input.key(), ig);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => add_into(acc, &g),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` that track gradients, inputs before users.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Inner> = HashSet::new();
        // (tensor, children already pushed)
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for input in &node.inputs {
                    if input.requires_grad() && !visited.contains(&input.key()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_rejects_zero_dims() {
        assert!(Shape::new(vec![2, 0]).is_err());
        assert_eq!(Shape::new(vec![2, 3, 4]).unwrap().strides(), vec![12, 4, 1]);
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(vec![1.0; 5], vec![2, 3]).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::param(vec![1.0, -2.0, 3.0], vec![3]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_square_is_two_x() {
        let x = Tensor::param(vec![1.0, -2.0, 0.5], vec![3]).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::param(vec![1.0, 2.0], vec![2]).unwrap();
        x.sum().backward().unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(vec![1.0, 2.0], vec![2]).unwrap();
        assert!(matches!(x.backward(), Err(Error::NotScalar(_))));
    }

    #[test]
    fn diamond_graph_sums_both_paths() {
        let x = Tensor::param(vec![3.0], vec![1]).unwrap();
        let a = x.scale(2.0);
        let b = x.scale(5.0);
        a.add(&b).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn constants_have_no_node() {
        let a = Tensor::new(vec![1.0, 2.0], vec![2]).unwrap();
        let b = a.scale(3.0);
        assert!(b.is_leaf());
        assert!(!b.requires_grad());
    }
}
