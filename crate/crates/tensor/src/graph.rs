//! Reverse-mode tape.
//!
//! Every differentiable op evaluates eagerly and, when gradients are
//! enabled and at least one operand is tracked, pushes a node holding a
//! backward closure. [`Graph::backward`] walks the tape in reverse.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::param::{Param, ParamId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
    param: Option<ParamId>,
}

/// A value produced inside a [`Graph`], optionally tracked for gradients.
#[derive(Clone, Debug)]
pub struct Var<T> {
    value: Arc<Tensor<T>>,
    node: Option<usize>,
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shared(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn dims4(&self) -> Result<[usize; 4]> {
        self.value.dims4()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }
}

/// Running-statistics update emitted by a batch-norm layer in training mode.
#[derive(Debug, Clone)]
pub struct BufferUpdate<T> {
    pub id: ParamId,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphMode {
    pub grad: bool,
    pub training: bool,
}

/// Tensors in recording order.
pub type NamedTensors<T> = Vec<(String, Tensor<T>)>;

/// Tape of one forward pass. Not `Sync`: create one per worker.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    mode: GraphMode,
    macs: Cell<u64>,
    updates: RefCell<Vec<BufferUpdate<T>>>,
    taps: RefCell<Option<NamedTensors<T>>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(mode: GraphMode) -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            mode,
            macs: Cell::new(0),
            updates: RefCell::new(Vec::new()),
            taps: RefCell::new(None),
        }
    }

    /// Gradients on, batch statistics for normalization.
    pub fn train() -> Self {
        Self::new(GraphMode { grad: true, training: true })
    }

    /// Gradients on, running statistics for normalization.
    pub fn eval_with_grad() -> Self {
        Self::new(GraphMode { grad: true, training: false })
    }

    /// Pure inference.
    pub fn inference() -> Self {
        Self::new(GraphMode { grad: false, training: false })
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode.training
    }

    pub fn grad_enabled(&self) -> bool {
        self.mode.grad
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Multiply-accumulate operations executed so far.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub(crate) fn add_macs(&self, n: u64) {
        self.macs.set(self.macs.get().saturating_add(n));
    }

    /// Untracked value.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var { value: Arc::new(value), node: None }
    }

    /// Tracked leaf, for gradients with respect to inputs.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        self.leaf_shared(Arc::new(value), None)
    }

    /// Tracked leaf bound to a trainable parameter; constant otherwise.
    pub fn param(&self, p: &Param<T>) -> Var<T> {
        if p.is_trainable() {
            self.leaf_shared(p.shared(), Some(p.id()))
        } else {
            Var { value: p.shared(), node: None }
        }
    }

    fn leaf_shared(&self, value: Arc<Tensor<T>>, param: Option<ParamId>) -> Var<T> {
        if !self.mode.grad {
            return Var { value, node: None };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents: Vec::new(), backward: None, param });
        Var { value, node: Some(nodes.len() - 1) }
    }

    /// Wraps an op result. `backward` maps the output gradient to one
    /// optional gradient per entry of `inputs`, in order.
    pub(crate) fn record(
        &self,
        value: Tensor<T>,
        inputs: &[&Var<T>],
        backward: impl Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<T> {
        let tracked = self.mode.grad && inputs.iter().any(|v| v.node.is_some());
        if !tracked {
            return Var { value: Arc::new(value), node: None };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: inputs.iter().map(|v| v.node).collect(),
            backward: Some(Box::new(backward)),
            param: None,
        });
        Var { value: Arc::new(value), node: Some(nodes.len() - 1) }
    }

    pub(crate) fn push_update(&self, update: BufferUpdate<T>) {
        if self.mode.training {
            self.updates.borrow_mut().push(update);
        }
    }

    /// Running-statistics updates produced during this pass.
    pub fn take_updates(&self) -> Vec<BufferUpdate<T>> {
        std::mem::take(&mut *self.updates.borrow_mut())
    }

    /// Starts recording named intermediates passed to [`Graph::tap`].
    pub fn enable_taps(&self) {
        *self.taps.borrow_mut() = Some(Vec::new());
    }

    /// Records a copy of `v` under `name` if taps are enabled.
    pub fn tap(&self, name: impl Into<String>, v: &Var<T>) {
        if let Some(taps) = self.taps.borrow_mut().as_mut() {
            taps.push((name.into(), v.value().clone()));
        }
    }

    pub fn take_taps(&self) -> NamedTensors<T> {
        self.taps.borrow_mut().take().unwrap_or_default()
    }

    /// Back-propagates from a one-element `loss`. Consumes the tape.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value().numel() != 1 {
            return Err(invalid("backward", format!("loss must have one element, got {:?}", loss.shape())));
        }
        let root = loss.node.ok_or_else(|| invalid("backward", "loss is not tracked"))?;
        let mut nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::full(loss.shape().to_vec(), T::one()));
        let mut out = Gradients { nodes: HashMap::new(), params: HashMap::new() };
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &mut nodes[id];
            match node.backward.take() {
                Some(bw) => {
                    let parent_grads = bw(&g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (parent, pg) in node.parents.iter().zip(parent_grads) {
                        if let (Some(p), Some(pg)) = (parent, pg) {
                            match &mut grads[*p] {
                                Some(acc) => acc.add_assign(&pg),
                                slot @ None => *slot = Some(pg),
                            }
                        }
                    }
                }
                None => {
                    if let Some(pid) = node.param {
                        match out.params.get_mut(&pid) {
                            Some(acc) => acc.add_assign(&g),
                            None => {
                                out.params.insert(pid, g.clone());
                            }
                        }
                    }
                    out.nodes.insert(id, g);
                }
            }
        }
        Ok(out)
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T> {
    nodes: HashMap<usize, Tensor<T>>,
    params: HashMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf created by [`Graph::leaf`] or
    /// [`Graph::param`]. `None` when the leaf did not influence the loss.
    pub fn wrt(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        v.node.and_then(|id| self.nodes.get(&id))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}
