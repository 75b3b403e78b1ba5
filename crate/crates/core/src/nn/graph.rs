//! Reverse-mode tape. One `Graph` per forward pass; parameters enter as leaves.

use std::collections::HashMap;
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Maps the output gradient to one optional gradient per parent. The `&[bool]`
/// flags which parents actually need one.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Arc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    params: HashMap<ParamId, Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: true, params: HashMap::new() }
    }

    /// A graph that records no backward closures.
    pub fn inference() -> Self {
        Graph { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(Arc::new(t), false)
    }

    pub fn constant_arc(&mut self, t: Arc<Tensor>) -> Var {
        self.push_leaf(t, false)
    }

    /// A free leaf that receives a gradient (used by gradient checks).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_leaf(Arc::new(t), true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push_leaf(store.value_arc(id), !store.is_frozen(id));
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub(crate) fn arc(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes[v.0].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// True when an op over `parents` must record its backward closure.
    pub(crate) fn tracking(&self, parents: &[Var]) -> bool {
        self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad)
    }

    pub(crate) fn push_op(&mut self, value: Tensor, parents: &[Var], backward: Option<BackwardFn>) -> Var {
        let tracking = self.tracking(parents);
        self.nodes.push(Node {
            value: Arc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            backward: if tracking { backward } else { None },
            requires_grad: tracking,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push_op_arc(&mut self, value: Arc<Tensor>, parents: &[Var], backward: Option<BackwardFn>) -> Var {
        let tracking = self.tracking(parents);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: if tracking { backward } else { None },
            requires_grad: tracking,
        });
        Var(self.nodes.len() - 1)
    }

    /// Backpropagates from a scalar `loss` and returns gradients of every grad-requiring leaf.
    pub fn backward(&mut self, loss: Var) -> Gradients {
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let seed = Tensor::full(self.nodes[loss.0].value.shape(), 1.0);
        grads[loss.0] = Some(seed);
        let mut leaves = HashMap::new();
        for i in (0..n).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.backward {
                None => {
                    leaves.insert(i, gout);
                }
                Some(f) => {
                    let needs: Vec<bool> = node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect();
                    let pgrads = f(&gout, &needs);
                    debug_assert_eq!(pgrads.len(), node.parents.len());
                    for ((&p, g), &need) in node.parents.iter().zip(pgrads).zip(&needs) {
                        let Some(g) = g else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(
                            g.len(),
                            self.nodes[p].value.len(),
                            "gradient shape mismatch for node {p}"
                        );
                        match &mut grads[p] {
                            Some(acc) => acc.add_assign(&g),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
            }
        }
        let params = self
            .params
            .iter()
            .filter_map(|(&id, v)| leaves.get(&v.0).map(|g| (id, g.clone())))
            .collect();
        Gradients { leaves, params }
    }
}

pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn into_params(self) -> HashMap<ParamId, Tensor> {
        self.params
    }
}
