//! Named, ordered parameter storage shared by the optimizer and checkpoints.

use std::collections::HashMap;

use crate::error::{bail, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    /// Accumulated gradient; `None` until a backward pass reaches it.
    pub grad: Option<Vec<T>>,
    pub requires_grad: bool,
}

/// Parameters keyed by a stable dotted path, e.g. `residual.stage1.block0.conv1.weight`.
/// Iteration follows insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            bail!(Config, "duplicate parameter path {}", name);
        }
        let slot = self.params.len();
        self.index.insert(name.clone(), slot);
        self.names.push(name);
        self.params.push(Parameter {
            value,
            grad: None,
            requires_grad: true,
        });
        Ok(slot)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.slot(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.slot(name).map(|i| &mut self.params[i])
    }

    pub fn at(&self, slot: usize) -> &Parameter<T> {
        &self.params[slot]
    }

    pub fn at_mut(&mut self, slot: usize) -> &mut Parameter<T> {
        &mut self.params[slot]
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter<T>)> {
        self.names.iter().map(String::as_str).zip(self.params.iter_mut())
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Scalar count of parameters whose path starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    /// Enters a parameter into `graph` as a leaf tagged with its slot.
    pub fn bind(&self, graph: &mut Graph<T>, name: &str) -> Result<Var> {
        let Some(slot) = self.slot(name) else {
            bail!(Config, "unknown parameter path {}", name);
        };
        let p = &self.params[slot];
        Ok(graph.param_leaf(p.value.clone(), slot, p.requires_grad))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the gradients of every parameter leaf in `graph` into the store.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>) {
        for (slot, grad) in graph.param_grads() {
            let Some(grad) = grad else { continue };
            let p = &mut self.params[slot];
            if !p.requires_grad {
                continue;
            }
            match &mut p.grad {
                Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, &g)| *a += g),
                None => p.grad = Some(grad.to_vec()),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::full([3], 2.0)).unwrap();
        for _ in 0..2 {
            let mut g = Graph::new();
            let w = store.bind(&mut g, "w").unwrap();
            let s = g.sum(w);
            g.backward(s).unwrap();
            store.accumulate_grads(&g);
        }
        assert_eq!(store.get("w").unwrap().grad.as_deref(), Some(&[2.0, 2.0, 2.0][..]));
        store.zero_grad();
        assert!(store.get("w").unwrap().grad.is_none());
    }

    #[test]
    fn frozen_parameters_never_accumulate() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::full([2], 1.0)).unwrap();
        store.get_mut("w").unwrap().requires_grad = false;
        let mut g = Graph::new();
        let w = store.bind(&mut g, "w").unwrap();
        let s = g.sum(w);
        g.backward(s).unwrap();
        store.accumulate_grads(&g);
        assert!(store.get("w").unwrap().grad.is_none());
    }

    #[test]
    fn duplicate_and_unknown_paths() {
        let mut store = ParamStore::<f32>::new();
        store.insert("a", Tensor::zeros([1])).unwrap();
        assert!(store.insert("a", Tensor::zeros([1])).is_err());
        let mut g = Graph::new();
        assert!(store.bind(&mut g, "b").is_err());
    }
}
