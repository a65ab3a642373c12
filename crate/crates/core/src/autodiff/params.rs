//! Named parameter storage. Parameters live here between steps (always in
//! f64) and are registered into a fresh graph each step. Iteration order is
//! name-sorted everywhere, which keeps updates, gradient clipping, and
//! checkpoint layout deterministic.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::format;

use crate::error::{Error, Result};
use crate::real::Real;

use super::{Graph, TensorId};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub values: Vec<f64>,
    pub shape: Vec<usize>,
    /// Per-parameter learning-rate multiplier (1.0 for most parameters,
    /// the language-encoder ratio for the token table).
    pub lr_scale: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>, shape: Vec<usize>) -> Result<()> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::ShapeMismatch {
                op: "param_store",
                detail: format!("{name}: {} values for shape {shape:?}", values.len()),
            });
        }
        self.entries.insert(
            name.to_string(),
            ParamEntry { values, shape, lr_scale: 1.0 },
        );
        Ok(())
    }

    pub fn set_lr_scale(&mut self, name: &str, scale: f64) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        entry.lr_scale = scale;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    /// Name-sorted iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.values().map(|e| e.values.len()).sum()
    }

    /// Flattens all parameters into one vector, name-sorted.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_values());
        for entry in self.entries.values() {
            out.extend_from_slice(&entry.values);
        }
        out
    }

    /// Overwrites all parameters from a flat vector laid out as `flatten`.
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_values() {
            return Err(Error::InvalidArgument(format!(
                "flat vector has {} values, store holds {}",
                flat.len(),
                self.total_values()
            )));
        }
        let mut offset = 0;
        for entry in self.entries.values_mut() {
            let n = entry.values.len();
            entry.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Per-graph map from parameter names to registered tensor ids.
pub struct Binding {
    ids: BTreeMap<String, TensorId>,
}

impl Binding {
    pub fn id(&self, name: &str) -> TensorId {
        self.ids[name]
    }

    pub fn get(&self, name: &str) -> Option<TensorId> {
        self.ids.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TensorId)> {
        self.ids.iter()
    }
}

/// Registers every parameter as a leaf tensor. With `trainable = false`
/// the tensors are plain inputs and backward never visits them, which is
/// the frozen-evaluation path.
pub fn bind<R: Real>(graph: &mut Graph<R>, store: &ParamStore, trainable: bool) -> Result<Binding> {
    let mut ids = BTreeMap::new();
    for (name, entry) in store.iter() {
        let values: Vec<R> = entry.values.iter().map(|&v| R::from_f64(v)).collect();
        let id = if trainable {
            graph.param(values, &entry.shape)?
        } else {
            graph.input(values, &entry.shape)?
        };
        ids.insert(name.clone(), id);
    }
    Ok(Binding { ids })
}

/// Collects gradients for every bound parameter after `backward`.
pub fn collect_grads(graph: &Graph<f64>, binding: &Binding) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (name, &id) in binding.iter() {
        let grad = graph
            .grad(id)
            .ok_or_else(|| Error::InvalidArgument(format!("no gradient for parameter {name}")))?;
        out.insert(name.clone(), grad.to_vec());
    }
    Ok(out)
}
