use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::ArrayD;

use crate::params::{ParamId, ParamStore};
use crate::Real;

pub(crate) type BackwardFn<S> = Box<dyn Fn(&ArrayD<S>) -> Vec<Option<ArrayD<S>>>>;

struct Node<S> {
    value: Rc<ArrayD<S>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<S>>,
    requires_grad: bool,
}

/// Records operations for one forward pass; `backward` walks it in reverse.
///
/// A tape is meant to be short-lived: build it, run a forward pass, take
/// gradients, drop it.
pub struct Tape<S: Real> {
    nodes: RefCell<Vec<Node<S>>>,
    param_nodes: RefCell<HashMap<ParamId, usize>>,
    grad_enabled: bool,
}

/// A value recorded on a [`Tape`].
pub struct Var<'t, S: Real> {
    pub(crate) tape: &'t Tape<S>,
    pub(crate) id: usize,
}

impl<S: Real> Clone for Var<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S: Real> Copy for Var<'_, S> {}

impl<S: Real> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{}, shape={:?})", self.id, self.shape())
    }
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            param_nodes: RefCell::new(HashMap::new()),
            grad_enabled: true,
        }
    }

    /// Tape that keeps values but never records backward closures.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node<S>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Constant input; receives no gradient.
    pub fn constant(&self, value: ArrayD<S>) -> Var<'_, S> {
        self.push_node(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
        })
    }

    /// Leaf input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&self, value: ArrayD<S>) -> Var<'_, S> {
        self.push_node(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: self.grad_enabled,
        })
    }

    /// Loads a parameter; repeated loads of the same id share one node.
    pub fn param(&self, store: &ParamStore<S>, id: ParamId) -> Var<'_, S> {
        if let Some(&node) = self.param_nodes.borrow().get(&id) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let v = self.leaf(store.get(id).clone());
        self.param_nodes.borrow_mut().insert(id, v.id);
        v
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<ArrayD<S>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn record(
        &self,
        value: ArrayD<S>,
        parents: &[usize],
        backward: BackwardFn<S>,
    ) -> Var<'_, S> {
        let requires_grad = self.grad_enabled && {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        self.push_node(Node {
            value: Rc::new(value),
            parents: if requires_grad {
                parents.to_vec()
            } else {
                Vec::new()
            },
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
        })
    }

    /// Like `record`, but the backward closure may share the output value
    /// instead of keeping its own copy. `make` only runs when a gradient is
    /// actually needed.
    pub(crate) fn record_out(
        &self,
        value: ArrayD<S>,
        parents: &[usize],
        make: impl FnOnce(Rc<ArrayD<S>>) -> BackwardFn<S>,
    ) -> Var<'_, S> {
        let requires_grad = self.grad_enabled && {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        let value = Rc::new(value);
        let backward = requires_grad.then(|| make(Rc::clone(&value)));
        self.push_node(Node {
            value,
            parents: if requires_grad {
                parents.to_vec()
            } else {
                Vec::new()
            },
            backward,
            requires_grad,
        })
    }

    /// Reverse sweep from a scalar (or any-shape, seeded with ones) output.
    pub fn backward(&self, output: Var<'_, S>) -> Gradients<S> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<ArrayD<S>>> = Vec::new();
        grads.resize_with(output.id + 1, || None);
        grads[output.id] = Some(ArrayD::from_elem(nodes[output.id].value.raw_dim(), S::one()));
        let mut leaves = HashMap::new();
        for i in (0..=output.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.backward {
                Some(bw) => {
                    let pgs = bw(&g);
                    debug_assert_eq!(pgs.len(), node.parents.len());
                    for (&p, pg) in node.parents.iter().zip(pgs) {
                        let Some(pg) = pg else { continue };
                        if !nodes[p].requires_grad {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "grad shape at node {p}");
                        match &mut grads[p] {
                            Some(acc) => *acc += &pg,
                            slot => *slot = Some(pg),
                        }
                    }
                }
                None if node.requires_grad => {
                    leaves.insert(i, g);
                }
                None => {}
            }
        }
        let params = self
            .param_nodes
            .borrow()
            .iter()
            .map(|(&pid, &node)| (pid, node))
            .collect();
        Gradients { leaves, params }
    }
}

/// Gradients of leaves and parameters after a backward sweep.
pub struct Gradients<S> {
    leaves: HashMap<usize, ArrayD<S>>,
    params: HashMap<ParamId, usize>,
}

impl<S: Real> Gradients<S> {
    pub fn wrt(&self, v: Var<'_, S>) -> Option<&ArrayD<S>> {
        self.leaves.get(&v.id)
    }

    pub fn param(&self, id: ParamId) -> Option<&ArrayD<S>> {
        self.params.get(&id).and_then(|n| self.leaves.get(n))
    }

    /// Gradients for every id in the store, zero-filled where a parameter
    /// did not take part in the forward pass.
    pub fn dense(&self, store: &ParamStore<S>) -> Vec<ArrayD<S>> {
        store
            .ids()
            .map(|id| match self.param(id) {
                Some(g) => g.clone(),
                None => ArrayD::zeros(store.get(id).raw_dim()),
            })
            .collect()
    }
}

impl<'t, S: Real> Var<'t, S> {
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn value(&self) -> Rc<ArrayD<S>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn ndim(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.ndim()
    }

    /// Scalar value; panics if the variable holds more than one element.
    pub fn item(&self) -> S {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a non-scalar");
        *v.iter().next().unwrap()
    }
}
