//! Dense row-major `f64` tensors recorded onto an implicit compute graph.
//!
//! Every tensor produced by an op that has at least one `requires_grad`
//! input remembers its inputs and the op that produced it. Calling
//! [`Tensor::backward`] on a scalar walks that graph once in reverse
//! creation order and sums gradients into every `requires_grad` tensor it
//! reaches.
//!
//! Tensors are reference counted and single-threaded. Use
//! [`Tensor::to_data`] to obtain a plain, sendable [`TensorData`].

use std::cell::{Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Detached tensor contents. Plain data, `Send + Sync`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone)]
pub struct Tensor {
    pub(crate) node: Rc<Node>,
}

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: RefCell<Vec<f64>>,
    pub(crate) grad: RefCell<Option<Vec<f64>>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Option<Op>,
}

/// Backward rule of the op that produced a tensor, together with its inputs.
pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Div(Tensor, Tensor),
    Neg(Tensor),
    Scale(Tensor, f64),
    Square(Tensor),
    Sqrt(Tensor),
    Exp(Tensor),
    Log(Tensor),
    Sigmoid(Tensor),
    Relu(Tensor),
    Softplus(Tensor),
    MatMul(Tensor, Tensor),
    MixNodes(Tensor, Tensor),
    TemporalConv(Tensor, Tensor),
    Sum(Tensor),
    Mean(Tensor),
    SumAxis(Tensor, usize),
    MeanAxis(Tensor, usize),
    Reshape(Tensor),
    Concat(Vec<Tensor>, usize),
    LogSoftmax(Tensor),
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<&Tensor> {
        use Op::*;
        match self {
            Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | Div(a, b)
            | MatMul(a, b)
            | MixNodes(a, b)
            | TemporalConv(a, b) => vec![a, b],
            Neg(a)
            | Scale(a, _)
            | Square(a)
            | Sqrt(a)
            | Exp(a)
            | Log(a)
            | Sigmoid(a)
            | Relu(a)
            | Softplus(a)
            | Sum(a)
            | Mean(a)
            | SumAxis(a, _)
            | MeanAxis(a, _)
            | Reshape(a)
            | LogSoftmax(a) => vec![a],
            Concat(xs, _) => xs.iter().collect(),
        }
    }
}

impl Tensor {
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = op.inputs().iter().any(|t| t.requires_grad());
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                op: if requires_grad { Some(op) } else { None },
            }),
        }
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        if numel(&shape) != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                op: None,
            }),
        })
    }

    /// A constant (non-differentiable) tensor.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape.to_vec(), data, false)
    }

    /// A learnable leaf tensor.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::leaf(shape.to_vec(), vec![0.0; numel(shape)], false).expect("shape matches")
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::leaf(shape.to_vec(), vec![value; numel(shape)], false).expect("shape matches")
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::leaf(Vec::new(), vec![value], false).expect("shape matches")
    }

    pub fn from_data(data: &TensorData) -> Result<Tensor> {
        Tensor::from_vec(&data.shape, data.data.clone())
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

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.node.data.borrow()
    }

    /// Mutable access to the values. Meant for leaves (optimizer updates,
    /// checkpoint loading, finite-difference probes); mutating an op output
    /// does not propagate anywhere.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.node.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.data.borrow().clone()
    }

    pub fn to_data(&self) -> TensorData {
        TensorData {
            shape: self.node.shape.clone(),
            data: self.to_vec(),
        }
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let data = self.node.data.borrow();
        assert_eq!(
            data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.node.shape
        );
        data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Copy of the values as a fresh constant leaf.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.node.shape.clone(), self.to_vec(), false).expect("shape matches")
    }

    pub(crate) fn id(&self) -> u64 {
        self.node.id
    }

    /// Sign pattern (`input > 0`) of every ReLU in the graph that produced
    /// this tensor, in creation order. Two evaluations of the same
    /// computation share a pattern exactly when they lie on the same smooth
    /// piece of the function.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut seen = HashSet::new();
        let mut relus = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(op) = &t.node.op {
                if let Op::Relu(input) = op {
                    relus.push(input.clone());
                }
                stack.extend(op.inputs().into_iter().cloned());
            }
        }
        relus.sort_by_key(Tensor::id);
        relus
            .iter()
            .flat_map(|t| t.data().iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect()
    }

    /// Reverse-mode pass from a scalar. Gradients are summed into existing
    /// `grad` buffers, so two calls without [`Tensor::zero_grad`] double them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Node ids increase with creation, so descending id order is a
        // reverse topological order of the graph.
        let mut seen = HashSet::new();
        let mut order = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(op) = &t.node.op {
                stack.extend(op.inputs().into_iter().cloned());
            }
            order.push(t);
        }
        order.sort_by_key(|t| std::cmp::Reverse(t.id()));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for t in &order {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            {
                let mut stored = t.node.grad.borrow_mut();
                match stored.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *stored = Some(g.clone()),
                }
            }
            if let Some(op) = &t.node.op {
                super::backward::propagate(op, t, &g, &mut |input, contribution| {
                    if !input.requires_grad() {
                        return;
                    }
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.id(), contribution);
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.node.data.borrow();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("data", &preview)
            .finish()
    }
}
