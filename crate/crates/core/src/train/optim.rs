//! AdamW and a reduce-on-plateau learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::net::ParamStore;
use crate::tensor::{Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Decoupled-weight-decay Adam. Per element, with `t` the 1-based step:
/// `θ ← θ(1 − lr·wd)`, `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
/// `θ ← θ − lr·m̂/(√v̂ + ε)` with `m̂ = m/(1−β₁ᵗ)`, `v̂ = v/(1−β₂ᵗ)`.
/// Arithmetic is carried out in f64 and rounded once per element.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T: Scalar = f32> {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adamw",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = self.cfg.betas;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        let decay = 1.0 - lr * self.cfg.weight_decay;
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                let gi = gi.f64();
                let mi = b1 * md[i].f64() + (1.0 - b1) * gi;
                let vi = b2 * vd[i].f64() + (1.0 - b2) * gi * gi;
                md[i] = T::of(mi);
                vd[i] = T::of(vi);
                let theta = pd[i].f64() * decay - lr * (mi / c1) / ((vi / c2).sqrt() + self.cfg.eps);
                pd[i] = T::of(theta);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Minimum decrease that counts as an improvement.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.8,
            patience: 3,
            min_lr: 5e-6,
            threshold: 1e-8,
        }
    }
}

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs fail to improve on the best validation loss by at least
/// `threshold`, never going below `min_lr`. The counter restarts after a
/// reduction and on every improvement. Non-finite losses count as
/// non-improving.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub cfg: PlateauConfig,
    pub lr: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, cfg: PlateauConfig) -> Self {
        Self {
            cfg,
            lr,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn step(&mut self, val_loss: f64) -> f64 {
        let improved = val_loss.is_finite() && self.best.is_none_or(|b| val_loss <= b - self.cfg.threshold);
        if improved {
            self.best = Some(val_loss);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}
