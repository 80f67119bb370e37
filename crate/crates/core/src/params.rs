//! Named, ordered collections of learnable tensors.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<E: Element = f32> {
    pub name: String,
    pub value: Tensor<E>,
    pub learnable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<E: Element = f32> {
    params: Vec<Param<E>>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    /// Registers a learnable tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::contract(format!("duplicate parameter name {name:?}")));
        }
        self.params.push(Param {
            name,
            value,
            learnable: true,
        });
        Ok(ParamId(self.params.len() - 1))
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

    pub fn get(&self, id: ParamId) -> &Param<E> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<E> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<E> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<E>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<E>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn freeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.learnable = false);
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.zero_grad());
    }

    /// Adds the gradients from one backward pass into every learnable
    /// parameter's grad slot. Learnable parameters the loss did not reach
    /// get a zero slot.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for p in self.params.iter_mut().filter(|p| p.learnable) {
            p.value.ensure_grad();
        }
        for (id, g) in grads.param_grads() {
            let p = &mut self.params[id.0];
            if p.learnable {
                p.value.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Copy with converted storage precision.
    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    learnable: p.learnable,
                })
                .collect(),
        }
    }

    /// Sets every parameter to zero.
    pub fn zero_values(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|v| *v = E::default());
        }
    }
}

/// Scaled normal initialisation, `std = sqrt(2 / fan_in)`.
pub fn kaiming_normal<E: Element, R: Rng + ?Sized>(
    shape: Shape,
    fan_in: usize,
    rng: &mut R,
) -> Result<Tensor<E>> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::contract(e.to_string()))?;
    let values = (0..shape.numel())
        .map(|_| E::from_f64(normal.sample(rng)))
        .collect();
    Tensor::from_vec(shape, values)
}
