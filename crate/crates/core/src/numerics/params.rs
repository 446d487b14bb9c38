use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::tensor::{Scalar, Tensor};
use crate::error::{dim_err, Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

/// Named trainable tensors with gradient accumulators.
///
/// Networks hold only [`ParamId`]s, so the same network description can be
/// evaluated against a live store, a frozen target copy, or an `f64` cast.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<S = f32> {
    params: Vec<Parameter<S>>,
}

/// Gradient contributions produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients<S> {
    pub(crate) entries: Vec<(ParamId, Vec<S>)>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: ParamId) -> Option<&[S]> {
        self.entries
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[S])> {
        self.entries.iter().map(|(p, g)| (*p, g.as_slice()))
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a tensor initialised uniformly in `±1/sqrt(fan_in)`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / num_traits::Float::sqrt(fan_in.max(1) as f64);
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| S::of(rng.gen_range(-bound..bound)))
            .collect();
        let t = Tensor::new(shape.to_vec(), data).expect("shape matches data");
        self.add(name, t)
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

    /// Ids whose names start with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds `grads` into the stored accumulators.
    pub fn accumulate(&mut self, grads: &Gradients<S>) {
        for (id, g) in &grads.entries {
            for (acc, &v) in self.params[id.0].grad.data_mut().iter_mut().zip(g) {
                *acc += v;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    /// Euclidean norm of the gradients of `ids`.
    pub fn grad_norm(&self, ids: &[ParamId]) -> S {
        let sq: S = ids
            .iter()
            .flat_map(|id| self.params[id.0].grad.data().iter())
            .map(|&g| g * g)
            .sum();
        sq.sqrt()
    }

    /// Rescales gradients of `ids` so their joint norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, ids: &[ParamId], max_norm: S) -> S {
        let norm = self.grad_norm(ids);
        if norm > max_norm {
            let scale = max_norm / norm;
            for id in ids {
                self.params[id.0].grad.data_mut().iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    /// Copies all values from `other` (same layout required).
    pub fn copy_values_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return dim_err("copy_values_from", &[self.params.len()], &[other.params.len()]);
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.value.shape() != src.value.shape() {
                return dim_err("copy_values_from", dst.value.shape(), src.value.shape());
            }
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }

    /// Replaces the value of a named parameter, checking its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Argument(alloc::format!("unknown parameter `{name}`")))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return dim_err("set_value", p.value.shape(), value.shape());
        }
        p.value = value;
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}
