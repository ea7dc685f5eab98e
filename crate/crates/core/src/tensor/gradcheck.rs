//! Central finite-difference oracle for tape gradients.
//!
//! The function under test maps input vars to an output var of any shape.
//! It is contracted with fixed random weights `w` to the scalar
//! `L = Σ w ⊙ f(x)`. The analytic gradient of `L` comes from the tape; the
//! numeric one is the fourth-order central difference
//! `(4·D(h) − D(2h)) / 3` with `D(h) = (L(x+h) − L(x−h)) / 2h`, contracted in
//! f64.
//! Errors are norm-wise: `‖g_tape − g_fd‖₂ / max(‖g_tape‖₂, ‖g_fd‖₂)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, Scalar, Tape, Tensor, Var};

/// Outcome for one input of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct InputCheck {
    pub rel_err: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

pub fn check<T, F>(inputs: &[Tensor<T>], f: F, step: f64, seed: u64) -> Result<Vec<InputCheck>>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    let probe = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        f(&tape, &vars)?.value()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Tensor<T> = Tensor::uniform(probe.shape().to_vec(), -1.0, 1.0, &mut rng);

    let analytic: Vec<Tensor<T>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let y = f(&tape, &vars)?;
        let w = tape.constant(weights.clone());
        let loss = y.mul(w)?.sum();
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let contract = |xs: &[Tensor<T>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let y = f(&tape, &vars)?.value();
        Ok(y.data().iter().zip(weights.data()).map(|(a, b)| a.f64() * b.f64()).sum())
    };

    let mut results = Vec::with_capacity(inputs.len());
    for (i, x) in inputs.iter().enumerate() {
        let mut numeric = Vec::with_capacity(x.numel());
        for j in 0..x.numel() {
            let mut xs = inputs.to_vec();
            let base = x.data()[j];
            let mut at = |offset: f64| -> Result<(f64, f64)> {
                let shifted = base + T::of(offset);
                xs[i].data_mut()[j] = shifted;
                // Use the actually representable offset.
                Ok((shifted.f64() - base.f64(), contract(&xs)?))
            };
            let ((h1p, f1p), (h1m, f1m)) = (at(step)?, at(-step)?);
            let ((h2p, f2p), (h2m, f2m)) = (at(2.0 * step)?, at(-2.0 * step)?);
            let d1 = (f1p - f1m) / (h1p - h1m);
            let d2 = (f2p - f2m) / (h2p - h2m);
            numeric.push((4.0 * d1 - d2) / 3.0);
        }
        let a = analytic[i].to_f64_vec();
        let diff: f64 = a.iter().zip(&numeric).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let an: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = an.max(nn);
        results.push(InputCheck {
            rel_err: if denom == 0.0 { 0.0 } else { diff / denom },
            analytic_norm: an,
            numeric_norm: nn,
        });
    }
    Ok(results)
}

/// Largest relative error over all inputs.
pub fn max_rel_err<T, F>(inputs: &[Tensor<T>], f: F, step: f64, seed: u64) -> Result<f64>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    Ok(check(inputs, f, step, seed)?.iter().map(|c| c.rel_err).fold(0.0, f64::max))
}
