//! Parameterized building blocks that register their tensors in a
//! [`ParamStore`] under a name prefix.

use rand::Rng;

use super::{Bound, ParamStore};
use crate::tensor::{Conv2dSpec, Result, Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// He-normal weights for layers followed by a GELU/ReLU.
    He,
    /// Zero weights and bias: the layer starts as the constant 0.
    Zero,
}

fn weights<T: Scalar, R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, init: Init, rng: &mut R) -> Tensor<T> {
    match init {
        Init::He => Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng),
        Init::Zero => Tensor::zeros(shape),
    }
}

/// Biased 2-D convolution.
#[derive(Debug, Clone)]
pub struct Conv {
    weight: String,
    bias: String,
    spec: Conv2dSpec,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = format!("{name}.weight");
        let bias = format!("{name}.bias");
        store.insert(&weight, weights(vec![cout, cin, kernel, kernel], cin * kernel * kernel, init, rng));
        store.insert(&bias, Tensor::zeros(vec![cout]));
        Self {
            weight,
            bias,
            spec: Conv2dSpec::new(stride, kernel / 2),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(p.var(&self.weight)?, Some(p.var(&self.bias)?), self.spec)
    }
}

/// `x · W + b` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: String,
    bias: String,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = format!("{name}.weight");
        let bias = format!("{name}.bias");
        let w = match init {
            Init::He => Tensor::randn(vec![din, dout], (1.0 / din as f64).sqrt(), rng),
            Init::Zero => Tensor::zeros(vec![din, dout]),
        };
        store.insert(&weight, w);
        store.insert(&bias, Tensor::zeros(vec![dout]));
        Self { weight, bias }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(p.var(&self.weight)?)?.add(p.var(&self.bias)?)
    }
}
