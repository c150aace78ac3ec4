//! Named trainable tensors and their binding onto a tape.

use indexmap::IndexMap;

use crate::autograd::{Tape, Var};
use crate::error::{LmfnError, Result};
use crate::tensor::Tensor;

/// Ordered map from parameter path (e.g. `rfdb3/distill1/weight`) to tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(LmfnError::InvalidConfig(format!(
                "duplicate parameter path {name:?}"
            )));
        }
        self.params.insert(name, value.with_requires_grad(true));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Scalars held under `prefix/`.
    pub fn numel_under(&self, prefix: &str) -> usize {
        let p = format!("{prefix}/");
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(&p))
            .map(|(_, v)| v.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// Records every parameter as a gradient-requiring leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), tape.param(v.clone())))
            .collect();
        Bound { vars }
    }

    /// Adds the tape gradients of bound parameters into each tensor's grad.
    /// Parameters the loss did not reach receive an explicit zero gradient.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &Bound) {
        for (name, t) in self.params.iter_mut() {
            let Some(&v) = bound.vars.get(name) else {
                continue;
            };
            match tape.grad(v) {
                Some(g) => t.accumulate_grad(g),
                None => t.accumulate_grad(&vec![0.0; t.numel()]),
            }
        }
    }
}

/// Tape variables for each parameter of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    /// Binds parameter names to caller-provided variables.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| LmfnError::InvalidConfig(format!("parameter {name:?} is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_paths_are_rejected() {
        let mut s = ParamStore::new();
        s.insert("a/weight", Tensor::zeros([1, 1, 1, 1])).unwrap();
        assert!(s.insert("a/weight", Tensor::zeros([1, 1, 1, 1])).is_err());
    }

    #[test]
    fn numel_under_matches_prefix_only() {
        let mut s = ParamStore::new();
        s.insert("rfdb1/x", Tensor::zeros([2, 1, 1, 1])).unwrap();
        s.insert("rfdb10/x", Tensor::zeros([3, 1, 1, 1])).unwrap();
        assert_eq!(s.numel_under("rfdb1"), 2);
        assert_eq!(s.numel(), 5);
    }
}
