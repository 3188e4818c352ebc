use super::ops::Op;
use super::param::{ParamId, ParamStore};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Branch decisions taken by the piecewise-linear ops (leaky ReLU side,
/// max-pool winner), one entry per op call in recording order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BranchLog(Vec<Vec<u32>>);

enum BranchMode {
    Free,
    Record(BranchLog),
    Replay(BranchLog, usize),
}

/// Records operations in execution order for reverse-mode differentiation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    bindings: Vec<(ParamId, Var)>,
    branches: BranchMode,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bindings: Vec::new(),
            branches: BranchMode::Free,
        }
    }

    /// Starts logging the branch decisions of piecewise-linear ops.
    pub fn record_branches(&mut self) {
        self.branches = BranchMode::Record(BranchLog::default());
    }

    /// Makes piecewise-linear ops follow `log` instead of deciding from
    /// their inputs, so the recorded function stays on one linear piece.
    /// Finite differences across a kink then measure the derivative of that
    /// piece rather than a mixture of two.
    pub fn replay_branches(&mut self, log: BranchLog) {
        self.branches = BranchMode::Replay(log, 0);
    }

    pub fn take_branch_log(&mut self) -> Option<BranchLog> {
        match std::mem::replace(&mut self.branches, BranchMode::Free) {
            BranchMode::Record(log) | BranchMode::Replay(log, _) => Some(log),
            BranchMode::Free => None,
        }
    }

    pub(crate) fn tracks_branches(&self) -> bool {
        !matches!(self.branches, BranchMode::Free)
    }

    /// Logs `fresh` or substitutes the replayed decisions for this call.
    pub(crate) fn branch_pattern(&mut self, fresh: Vec<u32>) -> Vec<u32> {
        match &mut self.branches {
            BranchMode::Free => fresh,
            BranchMode::Record(log) => {
                log.0.push(fresh.clone());
                fresh
            }
            BranchMode::Replay(log, cursor) => {
                let replayed = log.0.get(*cursor).filter(|d| d.len() == fresh.len()).cloned();
                *cursor += 1;
                replayed.unwrap_or(fresh)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records the current value of a stored parameter as a leaf. Trainable
    /// parameters receive gradients through [`Gradients::accumulate_into`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.leaf(p.tensor.clone(), p.trainable());
        self.bindings.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub(crate) fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        // Ops whose inputs are all constant keep no backward state.
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Back-propagates from the scalar `root`, visiting records in exact
    /// reverse order of recording. Gradients of intermediate values are
    /// released as soon as they have been propagated; leaves keep theirs.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_node = &self.nodes[root.0];
        if root_node.value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got shape {:?}",
                root_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let mut sink = GradSink {
                tape: self,
                grads: &mut grads,
            };
            node.op.backward(self, &node.value, &gout, &mut sink);
        }
        Ok(Gradients { grads })
    }
}

/// Accumulates gradient contributions into the inputs of an op.
pub(crate) struct GradSink<'a, T> {
    tape: &'a Tape<T>,
    grads: &'a mut Vec<Option<Vec<T>>>,
}

impl<T: Real> GradSink<'_, T> {
    pub fn wants(&self, v: Var) -> bool {
        self.tape.needs_grad(v)
    }

    /// Mutable gradient buffer of `v`, zero-initialized on first use.
    pub fn buf(&mut self, v: Var) -> &mut [T] {
        let n = self.tape.value(v).len();
        self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn add(&mut self, v: Var, g: &[T]) {
        if !self.wants(v) {
            return;
        }
        let buf = self.buf(v);
        for (d, s) in buf.iter_mut().zip(g) {
            *d = *d + *s;
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradients of every parameter bound on `tape` into the store.
    /// A trainable parameter that was bound but received no gradient gets an
    /// explicit zero buffer.
    pub fn accumulate_into(&self, tape: &Tape<T>, store: &mut ParamStore<T>) {
        for &(id, var) in &tape.bindings {
            let p = store.get_mut(id);
            if !p.trainable() {
                continue;
            }
            let n = p.tensor.len();
            let dst = p.grad.get_or_insert_with(|| vec![T::zero(); n]);
            if let Some(g) = self.get(var) {
                for (d, s) in dst.iter_mut().zip(g) {
                    *d = *d + *s;
                }
            }
        }
    }
}
