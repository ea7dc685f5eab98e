//! Named parameter storage and its binding onto a tape.

use std::collections::BTreeMap;

use rand::Rng;

use crate::tensor::{Gradients, Result, Scalar, Tape, Tensor, TensorError, Var};

/// Trainable tensors keyed by dotted names, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).ok_or_else(|| TensorError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params.get_mut(name).ok_or_else(|| TensorError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars over all tensors.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Puts every parameter on `tape` as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.params.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect(),
        }
    }

    /// Puts every parameter on `tape` as a constant (inference).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.params.iter().map(|(k, v)| (k.clone(), tape.constant(v.clone()))).collect(),
        }
    }

    /// Adds Gaussian noise of standard deviation `std` to every parameter.
    pub fn perturb<R: Rng + ?Sized>(&mut self, std: f64, rng: &mut R) {
        for v in self.params.values_mut() {
            let noise = Tensor::<T>::randn(v.shape().to_vec(), std, rng);
            *v = v.add(&noise).expect("same shape");
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// Parameters of a [`ParamStore`] recorded on one tape.
#[derive(Debug, Clone)]
pub struct Bound<'t, T: Scalar = f32> {
    vars: BTreeMap<String, Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn var(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars.get(name).copied().ok_or_else(|| TensorError::MissingParam(name.to_string()))
    }

    /// Gradient of every bound parameter, zero where the loss does not
    /// depend on it.
    pub fn grads(&self, grads: &Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        self.vars.iter().map(|(k, &v)| (k.clone(), grads.wrt(v))).collect()
    }
}
