//! Named parameter sets.

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Ordered map from parameter name to trainable leaf tensor.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert `value` as a trainable leaf. A value that already is one is
    /// shared, not copied.
    pub fn insert(&mut self, name: impl Into<String>, value: &Tensor) {
        let leaf = if value.is_leaf() && value.requires_grad() {
            value.clone()
        } else {
            value.to_param()
        };
        self.params.insert(name.into(), leaf);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// Replace the values of an existing parameter, keeping its shape. The
    /// new leaf starts without a gradient.
    pub fn set(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        *slot = Tensor::param(data, slot.dims().to_vec())?;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Number of scalar parameters whose name starts with `prefix`.
    pub fn num_values_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.numel())
            .sum()
    }

    pub fn zero_grad(&self) {
        for p in self.params.values() {
            p.zero_grad();
        }
    }

    /// Accumulated gradients, zero-filled where a parameter received none.
    pub fn grads(&self) -> IndexMap<String, Vec<f64>> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), v.grad().unwrap_or_else(|| vec![0.0; v.numel()])))
            .collect()
    }

    /// Merge `other` into `self`; names must not collide.
    pub fn extend(&mut self, other: ParamStore) -> Result<()> {
        for (k, v) in other.params {
            if self.params.contains_key(&k) {
                return Err(invalid(format!("duplicate parameter `{k}`")));
            }
            self.params.insert(k, v);
        }
        Ok(())
    }
}

/// Uniform `±sqrt(6 / fan_in)` initialisation (He for ReLU networks).
pub fn he_uniform<R: Rng + ?Sized>(dims: &[usize], fan_in: usize, rng: &mut R) -> Result<Tensor> {
    let bound = (6.0 / fan_in as f64).sqrt();
    uniform(dims, bound, rng)
}

/// Uniform `±sqrt(1 / fan_in)` initialisation for linear projections.
pub fn lecun_uniform<R: Rng + ?Sized>(dims: &[usize], fan_in: usize, rng: &mut R) -> Result<Tensor> {
    let bound = (3.0 / fan_in as f64).sqrt();
    uniform(dims, bound, rng)
}

pub fn uniform<R: Rng + ?Sized>(dims: &[usize], bound: f64, rng: &mut R) -> Result<Tensor> {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(data, dims.to_vec())
}
