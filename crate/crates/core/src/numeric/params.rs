use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lookup: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::invalid(
                "params",
                format!("duplicate parameter `{name}`"),
            ));
        }
        let id = ParamId(self.tensors.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        Ok(id)
    }

    /// Weight matrix drawn from N(0, std²).
    pub fn add_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let normal = Normal::new(0.0, std).map_err(|e| Error::invalid("params", e.to_string()))?;
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.add(name, Tensor::new(shape, data)?)
    }

    pub fn add_constant(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        value: f64,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        self.add(name, Tensor::new(shape, vec![value; n])?)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn scale_grads(&mut self, factor: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale_grad(factor));
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Replaces the values of an existing parameter, keeping its shape.
    pub fn set_values(&mut self, id: ParamId, values: &[f64]) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if t.len() != values.len() {
            return Err(Error::shape(
                "params",
                format!(
                    "`{}` holds {} values, got {}",
                    self.names[id.0],
                    t.len(),
                    values.len()
                ),
            ));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }
}
