use std::collections::HashMap;

use ndarray::{ArrayD, IxDyn};

use crate::params::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// What a backward closure sees when it runs.
pub struct BackCtx<'a, T> {
    /// Gradient of the loss w.r.t. this node's output.
    pub grad: &'a ArrayD<T>,
    /// This node's forward value.
    pub out: &'a ArrayD<T>,
    /// Forward values of the parents, in the order they were recorded.
    pub inputs: Vec<&'a ArrayD<T>>,
    /// Which parents need a gradient.
    pub needs: Vec<bool>,
}

impl<T> BackCtx<'_, T> {
    pub fn needs(&self, i: usize) -> bool {
        self.needs[i]
    }
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackCtx<'_, T>) -> Vec<Option<ArrayD<T>>>>;

struct Node<T> {
    value: ArrayD<T>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Reverse-mode tape. Every op appends a node; [`Graph::backward`] walks the
/// tape once in reverse.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    param_nodes: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: true,
            param_nodes: HashMap::new(),
        }
    }

    /// A graph that records values only. Backward closures are dropped at
    /// construction time, which keeps inference cheap.
    pub fn inference() -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new()
        }
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

    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 0-d or single-element node.
    pub fn scalar(&self, v: Var) -> T {
        let value = self.value(v);
        assert_eq!(value.len(), 1, "scalar() on a node with {} elements", value.len());
        *value.iter().next().unwrap()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input. No gradient is ever computed for it.
    pub fn constant(&mut self, value: ArrayD<T>) -> Var {
        self.leaf(value, false)
    }

    /// An input that receives a gradient (used for gradient checks w.r.t.
    /// images, boxes and intermediate features).
    pub fn input(&mut self, value: ArrayD<T>) -> Var {
        let rg = self.grad_enabled;
        self.leaf(value, rg)
    }

    pub fn scalar_constant(&mut self, v: T) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Bind a parameter from `store`. Repeated calls return the same node so
    /// gradients of shared parameters accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let entry = store.entry(id);
        let rg = self.grad_enabled && entry.trainable;
        let v = self.leaf(entry.value.clone(), rg);
        self.param_nodes.insert(id, v);
        v
    }

    fn leaf(&mut self, value: ArrayD<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record an op. `backward` is kept only when some parent needs a
    /// gradient; it must return one entry per parent.
    pub fn push<F>(&mut self, value: ArrayD<T>, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&BackCtx<'_, T>) -> Vec<Option<ArrayD<T>>> + 'static,
    {
        let requires_grad =
            self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.to_vec(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Like [`Graph::push`] but the caller decides whether to build the
    /// closure at all. Ops that cache large buffers for backward use this to
    /// skip the work in inference mode.
    pub fn wants_grad(&self, parents: &[Var]) -> bool {
        self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad)
    }

    /// Back-propagate from a scalar node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(
            self.value(loss).len(),
            1,
            "backward() expects a scalar loss"
        );
        let seed = ArrayD::from_elem(self.value(loss).raw_dim(), T::one());
        self.backward_with_seed(loss, seed)
    }

    pub fn backward_with_seed(&self, root: Var, seed: ArrayD<T>) -> Grads<T> {
        let mut grads: Vec<Option<ArrayD<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Grads { grads };
        }
        assert_eq!(seed.shape(), self.value(root).shape());
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|p| self.nodes[p.0].requires_grad)
                .collect();
            let ctx = BackCtx {
                grad: &grad,
                out: &node.value,
                inputs: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                needs,
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (parent, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(
                    pg.shape(),
                    self.nodes[parent.0].value.shape(),
                    "gradient shape mismatch"
                );
                match &mut grads[parent.0] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Grads { grads }
    }

    /// Collect gradients of bound parameters.
    pub fn param_grads(&self, grads: &Grads<T>) -> Gradients<T> {
        let mut out = Gradients::default();
        for (&id, &v) in &self.param_nodes {
            if let Some(g) = grads.get(v) {
                out.insert(id, g.clone());
            }
        }
        out
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T> Grads<T> {
    /// Gradient of a leaf (input or parameter). Interior gradients are
    /// consumed during the reverse sweep.
    pub fn get(&self, v: Var) -> Option<&ArrayD<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
