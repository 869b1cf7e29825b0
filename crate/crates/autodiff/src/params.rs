use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Named registry of trainable tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn extend(&mut self, other: Params) -> Result<()> {
        for (name, t) in other.tensors {
            self.insert(name, t)?;
        }
        Ok(())
    }
}

/// Tape handles for every tensor of a [`Params`], all requiring gradients.
pub struct ParamVars<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> ParamVars<'t> {
    pub fn register(tape: &'t Tape, params: &Params) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| (name.clone(), tape.param(t.clone())))
            .collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t>)> {
        self.vars.iter()
    }

    /// Collect per-parameter gradients out of a finished backward pass.
    pub fn grads(&self, gradients: &Gradients) -> Grads {
        let tensors = self
            .vars
            .iter()
            .map(|(name, var)| (name.clone(), gradients.get(*var)))
            .collect();
        Grads { tensors }
    }
}

/// Per-parameter gradients, keyed like the [`Params`] they came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    tensors: BTreeMap<String, Tensor>,
}

impl Grads {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// True when every coordinate of every parameter whose name starts with
    /// `prefix` is exactly zero.
    pub fn all_zero_with_prefix(&self, prefix: &str) -> bool {
        self.tensors
            .iter()
            .filter(|(name, _)| name.starts_with(prefix))
            .all(|(_, t)| t.data().iter().all(|g| *g == 0.0))
    }
}
