use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::VelocityField;
use crate::tensor::{Result, Tensor, TensorError};
use crate::train::psnr;

/// Slack for accumulated rounding in `t₀ + n·Δt ≤ 1`.
const T_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub t0: f64,
    pub dt: f64,
    pub n_iters: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            t0: 0.95,
            dt: 0.002,
            n_iters: 15,
            samples: 5,
            seed: 0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.t0 > 0.0 && self.t0 < 1.0) {
            return Err(format!("t0 must lie in (0, 1), got {}", self.t0));
        }
        if !(self.dt > 0.0) {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        if self.t0 + self.n_iters as f64 * self.dt > 1.0 + T_EPS {
            return Err(format!(
                "t0 + n_iters·dt = {} exceeds 1",
                self.t0 + self.n_iters as f64 * self.dt
            ));
        }
        if self.samples == 0 {
            return Err("samples must be at least 1".into());
        }
        Ok(())
    }

    /// Time at the start of iteration `i` (and after iteration `i − 1`).
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }
}

fn invalid(op: &'static str, detail: String) -> TensorError {
    TensorError::InvalidGeometry { op, detail }
}

/// `x + Δt·v(x, t)`.
pub fn euler_step(x: &Tensor<f32>, t: f64, dt: f64, vf: &dyn VelocityField) -> Result<Tensor<f32>> {
    if t + dt > 1.0 + T_EPS {
        return Err(invalid("euler_step", format!("t + dt = {} exceeds 1", t + dt)));
    }
    let v = vf.velocity_at(x, t)?;
    axpy(x, dt, &v)
}

fn axpy(x: &Tensor<f32>, a: f64, v: &Tensor<f32>) -> Result<Tensor<f32>> {
    x.zip_map(v, |xi, vi| xi + (a as f32) * vi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub t: f64,
    /// SHA-256 of the little-endian bytes of the current image.
    pub hash: String,
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub rows: Vec<TraceRow>,
}

impl RefineTrace {
    /// Iteration with the highest PSNR (earliest on ties).
    pub fn argmax_psnr(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in &self.rows {
            if let Some(p) = r.psnr {
                if best.is_none_or(|(_, b)| p > b) {
                    best = Some((r.iteration, p));
                }
            }
        }
        best.map(|b| b.0)
    }

    /// Rows `iteration,t,psnr`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "t", "psnr"])?;
        for r in &self.rows {
            let p = r.psnr.map(|p| p.to_string()).unwrap_or_default();
            w.write_record([r.iteration.to_string(), r.t.to_string(), p])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn tensor_hash(x: &Tensor<f32>) -> String {
    let mut h = Sha256::new();
    for v in x.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Truncated flow-matching refinement: starting from `x_tilde` at `t₀`, each
/// iteration draws `S` noise samples, re-noises `x_t⁽ʲ⁾ = t·x + (1 − t)·εⱼ`,
/// averages `v(x_t⁽ʲ⁾, t)` over `j` and takes `x ← x + Δt·v̄`. The trace has
/// one row per visited time, starting with iteration 0.
pub fn tfmp_refine(
    x_tilde: &Tensor<f32>,
    vf: &dyn VelocityField,
    cfg: &FlowConfig,
    reference: Option<&Tensor<f32>>,
) -> Result<(Tensor<f32>, RefineTrace)> {
    cfg.validate().map_err(|e| invalid("tfmp_refine", e))?;
    if x_tilde.rank() == 0 {
        return Err(invalid("tfmp_refine", "input needs a batch axis".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cur = x_tilde.clone();
    let mut trace = RefineTrace::default();
    let record = |trace: &mut RefineTrace, i: usize, x: &Tensor<f32>| -> Result<()> {
        trace.rows.push(TraceRow {
            iteration: i,
            t: cfg.time(i),
            hash: tensor_hash(x),
            psnr: reference.map(|r| psnr(x, r)).transpose()?,
        });
        Ok(())
    };
    record(&mut trace, 0, &cur)?;
    let n = x_tilde.shape()[0];
    for i in 0..cfg.n_iters {
        let t = cfg.time(i);
        let scaled = cur.scale(t as f32);
        let mut noisy = Vec::with_capacity(cfg.samples);
        for _ in 0..cfg.samples {
            let eps = Tensor::<f32>::randn(cur.shape().to_vec(), 1.0, &mut rng);
            noisy.push(scaled.zip_map(&eps, |a, e| a + (1.0 - t) as f32 * e)?);
        }
        let refs: Vec<&Tensor<f32>> = noisy.iter().collect();
        let v = vf.velocity(&Tensor::concat(&refs, 0)?, &vec![t; n * cfg.samples])?;
        let mut mean = v.narrow(0, 0, n)?;
        for j in 1..cfg.samples {
            mean = mean.add(&v.narrow(0, j * n, n)?)?;
        }
        let mean = mean.scale(1.0 / cfg.samples as f32);
        cur = axpy(&cur, cfg.dt, &mean)?;
        record(&mut trace, i + 1, &cur)?;
    }
    Ok((cur, trace))
}

/// Runs [`tfmp_refine`] against `reference` and writes the
/// `iteration,t,psnr` CSV.
pub fn sweep_iterations<W: Write>(
    x_tilde: &Tensor<f32>,
    vf: &dyn VelocityField,
    cfg: &FlowConfig,
    reference: &Tensor<f32>,
    out: W,
) -> Result<RefineTrace> {
    let (_, trace) = tfmp_refine(x_tilde, vf, cfg, Some(reference))?;
    trace
        .write_csv(out)
        .map_err(|e| TensorError::Format(e.to_string()))?;
    Ok(trace)
}
