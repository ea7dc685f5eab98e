//! Flow-matching velocity fields and truncated flow-matching refinement.
//!
//! Time runs from `t = 0` (Gaussian noise) to `t = 1` (clean data) along the
//! linear path `x_t = (1 − t)·x0 + t·x1` whose velocity is `u = x1 − x0`.

mod refine;
mod velocity;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use refine::{euler_step, sweep_iterations, tensor_hash, tfmp_refine, FlowConfig, RefineTrace, TraceRow};
pub use velocity::{
    fm_loss, fm_train_step, VelocityArch, VelocityConfig, VelocityField, VelocityNet, VelocityTrainConfig, VelocityTrainer,
};

use crate::tensor::{Result, Tensor, TensorError};

/// One flow-matching training example batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FmPair {
    pub x_t: Tensor<f32>,
    /// One time per sample (leading axis).
    pub t: Vec<f64>,
    pub u: Tensor<f32>,
}

/// How training times are drawn.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TimeSampling {
    Uniform,
    /// `t = 1 − (1 − min)·U²`: uniform on `[min, 1)` warped toward 1.
    Late { min: f64 },
}

impl TimeSampling {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self {
            TimeSampling::Uniform => u,
            TimeSampling::Late { min } => 1.0 - (1.0 - min) * u * u,
        }
    }
}

/// Path point and target for explicit endpoints at per-sample times.
pub fn fm_interpolate(x0: &Tensor<f32>, x1: &Tensor<f32>, t: &[f64]) -> Result<FmPair> {
    if x0.shape() != x1.shape() || x1.rank() == 0 || x1.shape()[0] != t.len() {
        return Err(TensorError::ShapeMismatch {
            op: "fm_interpolate",
            lhs: x0.shape().to_vec(),
            rhs: x1.shape().to_vec(),
        });
    }
    let per = x1.numel() / t.len().max(1);
    let mut xt = Vec::with_capacity(x1.numel());
    let mut u = Vec::with_capacity(x1.numel());
    for (i, (&a, &b)) in x0.data().iter().zip(x1.data()).enumerate() {
        let ti = t[i / per];
        // Written so both endpoints are exact.
        xt.push(if ti == 1.0 { b } else if ti == 0.0 { a } else { ((1.0 - ti) * a as f64 + ti * b as f64) as f32 });
        u.push(b - a);
    }
    Ok(FmPair {
        x_t: Tensor::new(x1.shape().to_vec(), xt)?,
        t: t.to_vec(),
        u: Tensor::new(x1.shape().to_vec(), u)?,
    })
}

/// Draws `x0 ~ N(0, I)` and one `t` per sample, then forms the path point
/// and target for the clean batch `x1`.
pub fn fm_sample_pair_with<R: Rng + ?Sized>(x1: &Tensor<f32>, sampling: TimeSampling, rng: &mut R) -> Result<FmPair> {
    if x1.rank() == 0 {
        return Err(TensorError::InvalidGeometry {
            op: "fm_sample_pair",
            detail: "batch needs a leading axis".into(),
        });
    }
    let x0 = Tensor::<f32>::randn(x1.shape().to_vec(), 1.0, rng);
    let t: Vec<f64> = (0..x1.shape()[0]).map(|_| sampling.draw(rng)).collect();
    fm_interpolate(&x0, x1, &t)
}

/// [`fm_sample_pair_with`] with uniform times and a seeded generator.
pub fn fm_sample_pair(x1: &Tensor<f32>, seed: u64) -> Result<FmPair> {
    fm_sample_pair_with(x1, TimeSampling::Uniform, &mut ChaCha8Rng::seed_from_u64(seed))
}
