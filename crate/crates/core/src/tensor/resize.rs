//! Bilinear resampling of the last two dimensions.
//!
//! Uses the half-pixel (`align_corners = false`) convention without
//! antialiasing: output pixel `d` samples source coordinate
//! `s = (d + 0.5) · (in / out) − 0.5`, clamped below at 0, blending
//! `floor(s)` and `min(floor(s) + 1, in − 1)`. A 0.5 downscale therefore
//! averages 2×2 blocks exactly.

use super::{Result, Scalar, Tensor, TensorError};

/// Supported scale factors.
pub const SCALES: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone)]
pub(crate) struct AxisWeights {
    taps: Vec<(usize, usize, f64)>,
}

impl AxisWeights {
    fn new(input: usize, output: usize) -> Self {
        let ratio = input as f64 / output as f64;
        let taps = (0..output)
            .map(|d| {
                let s = ((d as f64 + 0.5) * ratio - 0.5).max(0.0);
                let i0 = (s.floor() as usize).min(input - 1);
                let i1 = (i0 + 1).min(input - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect();
        Self { taps }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ResizePlan {
    pub(crate) in_h: usize,
    pub(crate) in_w: usize,
    pub(crate) out_h: usize,
    pub(crate) out_w: usize,
    rows: AxisWeights,
    cols: AxisWeights,
}

impl ResizePlan {
    pub(crate) fn new(shape: &[usize], scale: f64) -> Result<Self> {
        let bad = |detail: String| TensorError::InvalidGeometry { op: "bilinear_resize", detail };
        if !SCALES.contains(&scale) {
            return Err(bad(format!("scale {scale} not in {SCALES:?}")));
        }
        if shape.len() < 2 {
            return Err(bad(format!("need at least 2 dims, got {shape:?}")));
        }
        let r = shape.len();
        let (in_h, in_w) = (shape[r - 2], shape[r - 1]);
        let out_h = (in_h as f64 * scale).floor() as usize;
        let out_w = (in_w as f64 * scale).floor() as usize;
        if out_h == 0 || out_w == 0 {
            return Err(bad(format!("{in_h}x{in_w} at scale {scale} is empty")));
        }
        Ok(Self {
            in_h,
            in_w,
            out_h,
            out_w,
            rows: AxisWeights::new(in_h, out_h),
            cols: AxisWeights::new(in_w, out_w),
        })
    }

    pub(crate) fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let planes = x.numel() / (self.in_h * self.in_w);
        let mut out = Vec::with_capacity(planes * self.out_h * self.out_w);
        for p in 0..planes {
            let src = &x.data()[p * self.in_h * self.in_w..(p + 1) * self.in_h * self.in_w];
            for &(y0, y1, fy) in &self.rows.taps {
                let (wy0, wy1) = (T::of(1.0 - fy), T::of(fy));
                for &(x0, x1, fx) in &self.cols.taps {
                    let (wx0, wx1) = (T::of(1.0 - fx), T::of(fx));
                    let top = src[y0 * self.in_w + x0] * wx0 + src[y0 * self.in_w + x1] * wx1;
                    let bot = src[y1 * self.in_w + x0] * wx0 + src[y1 * self.in_w + x1] * wx1;
                    out.push(top * wy0 + bot * wy1);
                }
            }
        }
        let mut shape = x.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = self.out_h;
        shape[r - 1] = self.out_w;
        Tensor::from_parts(shape, out)
    }

    /// Transpose of [`forward`]: scatters each output gradient to its taps.
    pub(crate) fn backward<T: Scalar>(&self, g: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
        let planes = g.numel() / (self.out_h * self.out_w);
        let mut out = vec![T::zero(); planes * self.in_h * self.in_w];
        for p in 0..planes {
            let dst = &mut out[p * self.in_h * self.in_w..(p + 1) * self.in_h * self.in_w];
            let src = &g.data()[p * self.out_h * self.out_w..(p + 1) * self.out_h * self.out_w];
            for (oy, &(y0, y1, fy)) in self.rows.taps.iter().enumerate() {
                let (wy0, wy1) = (T::of(1.0 - fy), T::of(fy));
                for (ox, &(x0, x1, fx)) in self.cols.taps.iter().enumerate() {
                    let (wx0, wx1) = (T::of(1.0 - fx), T::of(fx));
                    let v = src[oy * self.out_w + ox];
                    dst[y0 * self.in_w + x0] += v * wy0 * wx0;
                    dst[y0 * self.in_w + x1] += v * wy0 * wx1;
                    dst[y1 * self.in_w + x0] += v * wy1 * wx0;
                    dst[y1 * self.in_w + x1] += v * wy1 * wx1;
                }
            }
        }
        Tensor::from_parts(in_shape.to_vec(), out)
    }
}

/// Resizes the last two dims by `scale` ∈ {0.25, 0.5, 1, 2, 4}. Scale 1 returns
/// the input unchanged.
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    let plan = ResizePlan::new(x.shape(), scale)?;
    if scale == 1.0 {
        return Ok(x.clone());
    }
    Ok(plan.forward(x))
}
