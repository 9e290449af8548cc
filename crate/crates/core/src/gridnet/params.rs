use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Index;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named learnable tensors plus their accumulated gradients.
///
/// Insertion order is stable and is the order used by checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract("ParamStore::add", format!("duplicate parameter {name}")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Entry { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParamStore::set_value",
                lhs: e.value.shape(),
                rhs: value.shape(),
            });
        }
        e.value = value;
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids().filter(|&id| self.name(id).starts_with(prefix)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &e.value))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Copies every parameter whose name starts with one of `trainable`
    /// prefixes into `g` as a gradient-tracking leaf; everything else goes in
    /// as a constant.
    pub fn bind(&self, g: &mut Graph, trainable: &[&str]) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                let rg = trainable.iter().any(|p| e.name.starts_with(p));
                g.leaf(e.value.clone(), rg)
            })
            .collect();
        Bound { vars }
    }

    /// Like [`ParamStore::bind`] but only for parameters under `prefix`.
    /// Other ids are left unbound; indexing them panics.
    pub fn bind_prefix(&self, g: &mut Graph, prefix: &str, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if e.name.starts_with(prefix) {
                    g.leaf(e.value.clone(), trainable)
                } else {
                    Var(usize::MAX)
                }
            })
            .collect();
        Bound { vars }
    }

    /// Adds the graph's gradients for bound parameters into the store.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &Bound) {
        for (e, &v) in self.entries.iter_mut().zip(&bound.vars) {
            if v.0 == usize::MAX {
                continue;
            }
            if let Some(gr) = g.grad(v) {
                e.grad.add_assign(gr);
            }
        }
    }

    /// Copies values of every parameter present in `other` by name.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<usize> {
        let mut n = 0;
        for (_, name, value) in other.iter() {
            if let Some(id) = self.find(name) {
                self.set_value(id, value.clone())?;
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.to_string()).collect()
    }
}

/// Graph variables for a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        let v = &self.vars[id.0];
        assert!(v.0 != usize::MAX, "parameter {} is not bound", id.0);
        v
    }
}
