use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Result, Tensor, TensorError};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A trainable tensor and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Ordered collection of named parameters.
///
/// Insertion order is the canonical order used by the optimizer, checkpoints,
/// and gradient reductions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(ParamTensor::new(name, value));
        Ok(id)
    }

    /// Weight matrix `[rows, fan_in]` drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&ParamTensor> {
        Ok(self.get(self.id(name)?))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.grad.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    pub fn value_norm(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.value.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    /// Per-parameter value norms, for NaN diagnostics.
    pub fn value_norms(&self) -> Vec<(String, f64)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.sq_norm().sqrt()))
            .collect()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Adds `other`'s gradients into this store. Both stores must have the
    /// same layout.
    pub fn accumulate_grads(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "accumulate_grads",
                left: vec![self.params.len()],
                right: vec![other.params.len()],
            });
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.grad.shape() != src.grad.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "accumulate_grads",
                    left: dst.grad.shape().to_vec(),
                    right: src.grad.shape().to_vec(),
                });
            }
            for (d, s) in dst.grad.data_mut().iter_mut().zip(src.grad.data()) {
                *d += s;
            }
        }
        Ok(())
    }

    /// Copies values from `other` (same layout) without touching gradients.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.value.shape() != src.value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "copy_values_from",
                    left: dst.value.shape().to_vec(),
                    right: src.value.shape().to_vec(),
                });
            }
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::new();
        store.insert_zeros("w", &[2]).unwrap();
        assert_eq!(
            store.insert_zeros("w", &[3]),
            Err(TensorError::DuplicateParam("w".into()))
        );
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut store = ParamStore::new();
        let mut r = rng::seeded(3);
        let id = store.insert_uniform("w", &[16, 25], 25, &mut r).unwrap();
        assert!(store.get(id).value.data().iter().all(|v| v.abs() <= 0.2));
        assert_eq!(store.get(id).grad, Tensor::zeros(&[16, 25]));
    }
}
