use std::collections::HashMap;
use std::sync::Arc;

use super::conv::ConvGeom;
use super::norm::GroupGeom;
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// A differentiable operation implemented outside the engine.
///
/// `backward` receives the input values, the output value and the gradient
/// of the loss with respect to the output, and returns one gradient buffer
/// per input (`None` where the input is not differentiable).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum UnaryKind {
    Relu,
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Scale(f64),
    AddScalar(f64),
    Clamp(f64, f64),
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

pub(crate) enum Op {
    Leaf,
    Unary(Var, UnaryKind),
    Binary(Var, Var, BinaryKind),
    /// `b` is repeated over the leading axes of `a`.
    AddBcast(Var, Var),
    MulBcast(Var, Var),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        geom: GroupGeom,
        means: Vec<f64>,
        rstds: Vec<f64>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    PermuteRows {
        x: Var,
        axis: usize,
        perm: Arc<Vec<usize>>,
    },
    Sum(Var),
    Mean(Var),
    Upsample {
        x: Var,
        scale: usize,
    },
    Matmul(Var, Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Recording tape for one forward pass.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bound: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; gradients are not tracked through it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is recorded by [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Bind a stored parameter as a tracked leaf. Repeated calls with the
    /// same id return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone());
        self.bound.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, op_name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = self.op_requires_grad(&op);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn op_requires_grad(&self, op: &Op) -> bool {
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::Unary(x, _)
            | Op::Reshape(x)
            | Op::Permute { x, .. }
            | Op::PermuteRows { x, .. }
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Upsample { x, .. } => rg(x),
            Op::Binary(a, b, _) | Op::AddBcast(a, b) | Op::MulBcast(a, b) | Op::Matmul(a, b) => {
                rg(a) || rg(b)
            }
            Op::Conv { x, w, b, .. } => rg(x) || rg(w) || b.as_ref().is_some_and(rg),
            Op::GroupNorm { x, gamma, beta, .. } => rg(x) || rg(gamma) || rg(beta),
            Op::Concat { inputs, .. } | Op::Custom { inputs, .. } => inputs.iter().any(rg),
        }
    }

    /// Record a custom differentiable operation whose forward value has
    /// already been computed.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        let name = op.name();
        self.push(output, Op::Custom { inputs: inputs.to_vec(), op }, name)
    }

    /// Reverse-mode accumulation from a scalar loss. Gradients from any
    /// earlier call are discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Usage(
                "backward called on a value that does not depend on any tracked leaf".into(),
            ));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gout) = self.grads[idx].take() else {
                continue;
            };
            let contributions = self.backward_node(idx, &gout);
            self.grads[idx] = Some(gout);
            for (v, g) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.grads[v.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Gradient accumulated at `v` by the last [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    /// Gradient of every parameter bound on this graph, indexed by
    /// [`ParamId`]. Unbound parameters get `None`.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Option<Tensor>> {
        let mut out = vec![None; store.len()];
        for (&id, &v) in &self.bound {
            out[id.index()] = Some(
                self.grad(v)
                    .unwrap_or_else(|| Tensor::zeros(store.get(id).shape().to_vec())),
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap());
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_on_untracked_is_usage_error() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let y = g.scale(x, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros([2]));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn accumulation_over_shared_inputs_is_additive() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let a = g.scale(x, 2.0).unwrap();
        let b = g.scale(x, 5.0).unwrap();
        let s = g.add(a, b).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 7.0);
    }

    #[test]
    fn repeated_backward_is_deterministic() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_fn([3, 4], |i| (i as f64 * 0.3).sin()));
        let s = g.sigmoid(x).unwrap();
        let m = g.mul(s, x).unwrap();
        let loss = g.mean(m).unwrap();
        g.backward(loss).unwrap();
        let first = g.grad(x).unwrap();
        g.zero_grad();
        g.backward(loss).unwrap();
        assert_eq!(first, g.grad(x).unwrap());
    }

    #[test]
    fn params_bind_once() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.5)).unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, id);
        let b = g.param(&store, id);
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap();
        g.backward(y).unwrap();
        let grads = g.param_grads(&store);
        assert_eq!(grads[0].as_ref().unwrap().item(), 3.0);
    }
}
