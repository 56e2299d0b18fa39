//! Named parameters with optional gradient buffers.

use alloc::string::String;
use alloc::vec::Vec;

use crate::rng::Fnv64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One parameter tensor. `grad` is present iff the parameter is trainable.
#[derive(Clone, Debug)]
pub struct Param<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

impl<T: Scalar> Param<T> {
    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let grad = trainable.then(|| Tensor::zeros(value.shape()));
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total scalar count over all parameters, trainable or not.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.requires_grad())
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            if let Some(g) = p.grad.as_mut() {
                g.fill(T::zero());
            }
        }
    }

    /// Adds `scale * grad` into each trainable parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &[(ParamId, Tensor<T>)], scale: T) {
        for (id, g) in grads {
            if let Some(buf) = self.params[id.0].grad.as_mut() {
                buf.add_scaled(g, scale);
            }
        }
    }

    /// Fingerprint over names and values of the selected parameters.
    pub fn checksum_where(&self, mut keep: impl FnMut(&Param<T>) -> bool) -> u64 {
        let mut h = Fnv64::new();
        for p in self.params.iter().filter(|p| keep(p)) {
            h.write(p.name.as_bytes());
            h.write_u64(p.value.checksum());
        }
        h.finish()
    }

    pub fn checksum(&self) -> u64 {
        self.checksum_where(|_| true)
    }

    pub fn frozen_checksum(&self) -> u64 {
        self.checksum_where(|p| !p.requires_grad())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(|g| g.cast()),
                })
                .collect(),
        }
    }
}
