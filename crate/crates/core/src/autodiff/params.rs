use std::collections::BTreeMap;

use rand::Rng;

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor with its gradient buffer and optimizer moments.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub moment1: Vec<f64>,
    pub moment2: Vec<f64>,
    pub steps: u64,
}

/// Initialisation scheme for [`ParameterStore::get_or_init`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Glorot,
    /// Uniform with unit variance per entry, as for embedding tables.
    UnitUniform,
    Uniform(f64),
    Filled(f64),
}

/// Named collection of parameters, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let n = value.numel();
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.clone(),
            value,
            grad: vec![0.0; n],
            moment1: vec![0.0; n],
            moment2: vec![0.0; n],
            steps: 0,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    /// Inserts a parameter initialised from U(-a, a) with the Glorot bound
    /// for the first and last dimensions.
    pub fn insert_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        rng: &mut R,
    ) -> Result<ParamId> {
        let fan_in = shape[0];
        let fan_out = *shape.last().unwrap_or(&1);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.insert_uniform(name, shape, bound, rng)
    }

    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn insert_filled(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<ParamId> {
        self.insert(name, Tensor::filled(shape, value))
    }

    /// Returns the existing parameter `name` (checking its shape) or inserts
    /// a freshly initialised one.
    pub fn get_or_init<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        if let Some(id) = self.get_id(name) {
            let have = self.value(id).shape();
            if have != shape {
                return Err(Error::shape(
                    "parameter",
                    format!("{name}: stored {have:?}, expected {shape:?}"),
                ));
            }
            return Ok(id);
        }
        match init {
            Init::Glorot => self.insert_glorot(name, shape, rng),
            Init::UnitUniform => self.insert_uniform(name, shape, 3f64.sqrt(), rng),
            Init::Uniform(a) => self.insert_uniform(name, shape, a, rng),
            Init::Filled(v) => self.insert_filled(name, shape, v),
        }
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::NotFound(format!("parameter {name:?}")))
    }

    pub fn get_id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `grads` into the stored gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        self.accumulate_scaled(grads, 1.0);
    }

    pub fn accumulate_scaled(&mut self, grads: &Gradients, scale: f64) {
        for (id, g) in grads.iter() {
            let buf = &mut self.params[id.0].grad;
            for (b, v) in buf.iter_mut().zip(g) {
                *b += scale * v;
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Copies values of every parameter present in both stores (matched by name).
    pub fn copy_values_from(&mut self, other: &ParameterStore) -> Result<usize> {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(&oid) = other.by_name.get(&p.name) {
                let src = &other.params[oid.0].value;
                if src.shape() != p.value.shape() {
                    return Err(Error::shape(
                        "copy_values_from",
                        format!("{}: {:?} vs {:?}", p.name, src.shape(), p.value.shape()),
                    ));
                }
                p.value = src.clone();
                copied += 1;
            }
        }
        Ok(copied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::scalar(1.0)).unwrap();
        assert!(store.insert("w", Tensor::scalar(2.0)).is_err());
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn optimizer_state_matches_shape() {
        let mut store = ParameterStore::new();
        let id = store.insert_filled("m", &[3, 4], 0.5).unwrap();
        let p = store.param(id);
        assert_eq!(p.grad.len(), 12);
        assert_eq!(p.moment1.len(), 12);
        assert_eq!(p.moment2.len(), 12);
    }
}
