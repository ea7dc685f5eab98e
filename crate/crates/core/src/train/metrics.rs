//! Image quality metrics on float images in `[0, 1]` (no 8-bit
//! quantization).

use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Tensor, TensorError};

/// Value reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

fn same_shape(a: &Tensor<f32>, b: &Tensor<f32>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `−10·log10(MSE)` for unit peak, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_shape(a, b, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP_DB))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-mode filtering of an `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..n).map(|i| k[i] * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..n).map(|i| k[i] * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean SSIM over every fully contained 11×11 Gaussian window (σ = 1.5) and
/// every channel, for `[.., H, W]` images.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let r = a.rank();
    if r < 2 || a.shape()[r - 2] < SSIM_WINDOW || a.shape()[r - 1] < SSIM_WINDOW {
        return Err(TensorError::InvalidGeometry {
            op: "ssim",
            detail: format!("image {:?} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window", a.shape()),
        });
    }
    let (h, w) = (a.shape()[r - 2], a.shape()[r - 1]);
    let k = gaussian_taps();
    let (mut total, mut count) = (0.0, 0usize);
    for (pa, pb) in a.data().chunks(h * w).zip(b.data().chunks(h * w)) {
        let x: Vec<f64> = pa.iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = pb.iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &k));
        for i in 0..mx.len() {
            let (vx, vy, cxy) = (sxx[i] - mx[i] * mx[i], syy[i] - my[i] * my[i], sxy[i] - mx[i] * my[i]);
            total += ((2.0 * mx[i] * my[i] + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx[i] * mx[i] + my[i] * my[i] + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: Vec<SampleMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub runtime_ms: f64,
}

impl MetricsReport {
    /// Builds the report; means are arithmetic means of the rows.
    pub fn from_rows(samples: Vec<SampleMetrics>, runtime_ms: f64) -> Self {
        let n = samples.len().max(1) as f64;
        let mean_psnr = samples.iter().map(|s| s.psnr).sum::<f64>() / n;
        let mean_ssim = samples.iter().map(|s| s.ssim).sum::<f64>() / n;
        Self {
            samples,
            mean_psnr,
            mean_ssim,
            runtime_ms,
        }
    }

    /// Per-sample rows `id,psnr,ssim`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// PSNR and SSIM of one prediction.
pub fn evaluate_pair(id: impl Into<String>, pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<SampleMetrics> {
    Ok(SampleMetrics {
        id: id.into(),
        psnr: psnr(pred, gt)?,
        ssim: ssim(pred, gt)?,
    })
}
