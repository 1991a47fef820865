use indexmap::IndexMap;

use crate::graph::{Gradients, Graph, Var};
use crate::{NumericsError, Result, Tensor};

/// A named parameter tensor with a trainability flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered collection of named parameters. Insertion order is the canonical
/// order used by optimisers and checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
}

/// Graph handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter and returns its index.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<usize> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(NumericsError::Invalid(format!("duplicate parameter {name}")));
        }
        let (index, _) = self.params.insert_full(name, Param { value, trainable });
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn by_index(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn by_index_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn name_of(&self, index: usize) -> &str {
        self.params.get_index(index).map(|(k, _)| k.as_str()).unwrap_or("")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in self.params.values_mut() {
            p.trainable = trainable;
        }
    }

    /// Total element count, optionally restricted to trainable parameters.
    pub fn num_elements(&self, trainable_only: bool) -> usize {
        self.params
            .values()
            .filter(|p| !trainable_only || p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Places every parameter on the graph: trainable ones as leaves,
    /// frozen ones as constants.
    pub fn bind(&self, graph: &mut Graph) -> Binding {
        let vars = self
            .params
            .values()
            .map(|p| {
                if p.trainable {
                    graph.leaf(p.value.clone())
                } else {
                    graph.constant(p.value.clone())
                }
            })
            .collect();
        Binding { vars }
    }

    /// Extracts per-parameter gradients in store order; frozen parameters get `None`.
    pub fn collect_grads(&self, binding: &Binding, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.params
            .values()
            .zip(binding.vars())
            .map(|(p, &v)| if p.trainable { grads.take(v) } else { None })
            .collect()
    }
}

/// Rescales gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(Tensor::squared_norm)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
    norm
}
