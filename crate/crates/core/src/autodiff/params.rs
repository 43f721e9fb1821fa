use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{hash_str, rng_from};

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

/// Glorot-uniform tensor. Depends only on `(name, shape, seed)`.
pub fn glorot(name: &str, shape: &[usize], seed: u64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    let (fan_in, fan_out) = t.dims();
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = rng_from(&[seed, hash_str(name)]);
    for x in t.data_mut() {
        *x = rng.random_range(-bound..=bound);
    }
    t
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("parameter {name} defined twice")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn init_glorot(&mut self, name: &str, shape: &[usize], seed: u64) -> Result<()> {
        self.insert(name, glorot(name, shape, seed))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Replaces a parameter's values. The shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set parameter",
                lhs: slot.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
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

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), tape.param(k.clone(), v.clone())))
            .collect();
        Bound { vars }
    }

    /// Like [`ParamStore::bind`], but gradients are reported as
    /// `{tape_prefix}{name}` so two stores with overlapping names can share a tape.
    pub fn bind_as(&self, tape: &mut Tape, tape_prefix: &str) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), tape.param(format!("{tape_prefix}{k}"), v.clone())))
            .collect();
        Bound { vars }
    }

    /// Records only parameters whose name starts with `prefix`.
    pub fn bind_prefix(&self, tape: &mut Tape, prefix: &str) -> Bound {
        let vars = self
            .params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), tape.param(k.clone(), v.clone())))
            .collect();
        Bound { vars }
    }

    /// Moves every parameter under `prefix` (`"a"` becomes `"{prefix}a"`).
    pub fn prefixed(self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .into_iter()
                .map(|(k, v)| (format!("{prefix}{k}"), v))
                .collect(),
        }
    }

    /// Parameters under `prefix`, with the prefix stripped.
    pub fn extract(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn merge(&mut self, other: ParamStore) -> Result<()> {
        for (k, v) in other.params {
            self.insert(k, v)?;
        }
        Ok(())
    }
}

/// Tape handles for a set of bound parameters.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn extend(&mut self, other: Bound) {
        self.vars.extend(other.vars);
    }

    /// The handles whose name starts with `prefix`, renamed without it.
    pub fn strip(&self, prefix: &str) -> Bound {
        let vars = self
            .vars
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), *v)))
            .collect();
        Bound { vars }
    }
}
