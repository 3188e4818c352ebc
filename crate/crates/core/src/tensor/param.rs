use std::collections::HashMap;

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    State,
}

/// A named tensor plus its gradient slot and Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub kind: ParamKind,
    pub grad: Option<Vec<T>>,
    pub moment1: Vec<T>,
    pub moment2: Vec<T>,
    pub step_count: u64,
}

impl<T: Real> Parameter<T> {
    pub fn trainable(&self) -> bool {
        self.kind == ParamKind::Trainable
    }
}

/// Ordered collection of parameters; declaration order is the checkpoint order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a parameter. Panics on a duplicate name, which is a
    /// construction bug rather than a runtime condition.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, kind: ParamKind) -> ParamId {
        let name = name.into();
        let id = ParamId(self.params.len());
        assert!(
            self.by_name.insert(name.clone(), id).is_none(),
            "duplicate parameter name {name}"
        );
        let n = tensor.len();
        self.params.push(Parameter {
            name,
            tensor,
            kind,
            grad: None,
            moment1: vec![T::zero(); n],
            moment2: vec![T::zero(); n],
            step_count: 0,
        });
        id
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Element count over every tensor, running statistics included.
    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable())
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor<T>]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(Error::shape(format!(
                "snapshot has {} tensors, store has {}",
                snapshot.len(),
                self.params.len()
            )));
        }
        for (p, t) in self.params.iter_mut().zip(snapshot) {
            if p.tensor.shape() != t.shape() {
                return Err(Error::shape(format!(
                    "{}: expected {:?}, got {:?}",
                    p.name,
                    p.tensor.shape(),
                    t.shape()
                )));
            }
            p.tensor = t.clone();
        }
        Ok(())
    }

    /// Same tensors in another precision, optimizer state reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.add(p.name.clone(), p.tensor.cast(), p.kind);
        }
        out
    }
}
