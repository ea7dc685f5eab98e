//! Synthetic paired data: procedural clean images, a moiré degradation
//! `y = clip(x ⊙ m + n)`, and RGGB mosaic packing.
//!
//! The degradation model is a stand-in for captured screen moiré: a
//! multiplicative interference field `m = 1 + a·cos(2π(f·u′ + g·v′) + φ)`
//! evaluated on sinusoidally warped coordinates
//! `u′ = u + s·sin(2πv / P)`, `v′ = v + s·sin(2πu / P)` (`P` =
//! [`WARP_PERIOD`] pixels), followed by additive Gaussian noise and clipping
//! to `[0, 1]`. Tone mapping is the identity.

mod dataset;
mod png;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use dataset::{build_dataset, load_split, DatasetManifest, SampleEntry, Split, MANIFEST_FILE};
pub use png::{read_png, read_raw_png, write_png, write_raw_png};

use crate::tensor::{Result, Tensor, TensorError};

/// Period in pixels of the coordinate warp.
pub const WARP_PERIOD: f64 = 64.0;

/// Parameters of the interference field and the noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    /// Grating frequencies along x and y, in cycles per pixel.
    pub frequency: [f64; 2],
    pub phase: f64,
    pub amplitude: f64,
    /// Peak displacement of the coordinate warp, in pixels.
    pub warp: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl DegradationParams {
    pub fn identity() -> Self {
        Self {
            frequency: [0.1, 0.1],
            phase: 0.0,
            amplitude: 0.0,
            warp: 0.0,
            sigma: 0.0,
            seed: 0,
        }
    }

    /// Draws the default parameter distribution.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let freq = |rng: &mut R| -> f64 {
            let f: f64 = rng.random_range(0.02..0.2);
            if rng.random::<bool>() {
                f
            } else {
                -f
            }
        };
        Self {
            frequency: [freq(rng).abs(), freq(rng)],
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            amplitude: rng.random_range(0.2..0.5),
            warp: rng.random_range(0.0..3.0),
            sigma: rng.random_range(0.0..0.02),
            seed: rng.random(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for f in self.frequency {
            let m = f.abs();
            if !(m > 0.0 && m <= 0.5) {
                return Err(format!("grating frequency {f} outside (0, 0.5] cycles/pixel"));
            }
        }
        if !(self.sigma >= 0.0) || !self.amplitude.is_finite() || !self.warp.is_finite() || !self.phase.is_finite() {
            return Err(format!("invalid degradation parameters {self:?}"));
        }
        Ok(())
    }
}

/// A paired record: mosaic of the degraded image and the clean target.
#[derive(Debug, Clone, PartialEq)]
pub struct MoireSample {
    pub id: u64,
    /// `[4, H/2, W/2]` RGGB planes.
    pub raw: Tensor<f32>,
    /// `[3, H, W]`.
    pub clean: Tensor<f32>,
    /// `[3, H, W]` degraded sRGB before mosaicking.
    pub degraded: Tensor<f32>,
    pub params: DegradationParams,
}

/// Content layers of the clean generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Gradient,
    Strokes,
    Stripes,
    Checker,
}

fn check_size(size: usize) -> Result<()> {
    if size.is_power_of_two() && size >= 4 {
        Ok(())
    } else {
        Err(TensorError::InvalidGeometry {
            op: "synth",
            detail: format!("size must be a power of two ≥ 4, got {size}"),
        })
    }
}

fn color<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// One content layer as a `[3, size, size]` image in `[0, 1]`.
pub fn synth_pattern(pattern: Pattern, seed: u64, size: usize) -> Result<Tensor<f32>> {
    check_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = vec![0.0f64; 3 * size * size];
    let n = size as f64;
    let plane = size * size;
    match pattern {
        Pattern::Gradient => {
            let corners = [color(&mut rng), color(&mut rng), color(&mut rng), color(&mut rng)];
            for y in 0..size {
                for x in 0..size {
                    let (ty, tx) = (y as f64 / (n - 1.0), x as f64 / (n - 1.0));
                    for c in 0..3 {
                        let top = corners[0][c] * (1.0 - tx) + corners[1][c] * tx;
                        let bot = corners[2][c] * (1.0 - tx) + corners[3][c] * tx;
                        img[c * plane + y * size + x] = top * (1.0 - ty) + bot * ty;
                    }
                }
            }
        }
        Pattern::Stripes | Pattern::Checker => {
            let (fg, bg) = (color(&mut rng), color(&mut rng));
            let period = rng.random_range(2.5..6.0);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let (c, s) = (angle.cos(), angle.sin());
            for y in 0..size {
                for x in 0..size {
                    let (u, v) = (x as f64 * c + y as f64 * s, -(x as f64) * s + y as f64 * c);
                    let on = match pattern {
                        Pattern::Stripes => (u / period).rem_euclid(1.0) < 0.5,
                        _ => ((u / period).floor() as i64 + (v / period).floor() as i64).rem_euclid(2) == 0,
                    };
                    let col = if on { fg } else { bg };
                    for ch in 0..3 {
                        img[ch * plane + y * size + x] = col[ch];
                    }
                }
            }
        }
        Pattern::Strokes => {
            let bg = color(&mut rng);
            for ch in 0..3 {
                img[ch * plane..(ch + 1) * plane].fill(bg[ch]);
            }
            draw_strokes(&mut img, size, &mut rng, 8);
        }
    }
    Tensor::from_f64(vec![3, size, size], &img)
}

/// Short dark axis-aligned and diagonal segments grouped like glyphs.
fn draw_strokes<R: Rng + ?Sized>(img: &mut [f64], size: usize, rng: &mut R, glyphs: usize) {
    let plane = size * size;
    let ink = [rng.random_range(0.0..0.25), rng.random_range(0.0..0.25), rng.random_range(0.0..0.25)];
    let cell = (size / 8).max(3);
    for _ in 0..glyphs {
        let (gx, gy) = (rng.random_range(0..size - cell), rng.random_range(0..size - cell));
        for _ in 0..rng.random_range(2..5) {
            let (x0, y0) = (gx + rng.random_range(0..cell), gy + rng.random_range(0..cell));
            let (dx, dy): (i64, i64) = match rng.random_range(0..3) {
                0 => (1, 0),
                1 => (0, 1),
                _ => (1, 1),
            };
            let len = rng.random_range(cell / 2..=cell);
            for k in 0..len as i64 {
                let (x, y) = (x0 as i64 + k * dx, y0 as i64 + k * dy);
                if x < size as i64 && y < size as i64 {
                    for ch in 0..3 {
                        img[ch * plane + y as usize * size + x as usize] = ink[ch];
                    }
                }
            }
        }
    }
}

/// Procedural clean image mixing a smooth gradient, a stripe or checker
/// texture over a random rectangle, and glyph-like strokes.
pub fn synth_clean(seed: u64, size: usize) -> Result<Tensor<f32>> {
    check_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = synth_pattern(Pattern::Gradient, rng.random(), size)?;
    let texture = if rng.random::<bool>() { Pattern::Stripes } else { Pattern::Checker };
    let tex = synth_pattern(texture, rng.random(), size)?;
    let mut img: Vec<f64> = base.to_f64_vec();
    let plane = size * size;
    let (x0, y0) = (rng.random_range(0..size / 2), rng.random_range(0..size / 2));
    let (w, h) = (rng.random_range(size / 4..=size / 2), rng.random_range(size / 4..=size / 2));
    let mix = rng.random_range(0.5..1.0);
    for y in y0..(y0 + h).min(size) {
        for x in x0..(x0 + w).min(size) {
            for ch in 0..3 {
                let i = ch * plane + y * size + x;
                img[i] = (1.0 - mix) * img[i] + mix * tex.data()[i] as f64;
            }
        }
    }
    draw_strokes(&mut img, size, &mut rng, 4);
    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::from_f64(vec![3, size, size], &img)
}

/// The interference field `m(u, v)` on an `h × w` grid.
pub fn interference_field(p: &DegradationParams, h: usize, w: usize) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let mut m = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            let (uf, vf) = (u as f64, v as f64);
            let uw = uf + p.warp * (tau * vf / WARP_PERIOD).sin();
            let vw = vf + p.warp * (tau * uf / WARP_PERIOD).sin();
            m.push(1.0 + p.amplitude * (tau * (p.frequency[0] * uw + p.frequency[1] * vw) + p.phase).cos());
        }
    }
    m
}

/// `clip(x ⊙ m + n)` for `x: [C, H, W]`; noise is seeded by `p.seed`.
pub fn apply_moire(x: &Tensor<f32>, p: &DegradationParams) -> Result<Tensor<f32>> {
    p.validate().map_err(|detail| TensorError::InvalidGeometry { op: "apply_moire", detail })?;
    let s = x.shape();
    if s.len() != 3 {
        return Err(TensorError::InvalidGeometry {
            op: "apply_moire",
            detail: format!("expected [C, H, W], got {s:?}"),
        });
    }
    let (h, w) = (s[1], s[2]);
    let field = interference_field(p, h, w);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let noise = Normal::new(0.0, p.sigma).expect("sigma validated");
    let out: Vec<f64> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let n = if p.sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (v as f64 * field[i % (h * w)] + n).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::from_f64(s.to_vec(), &out)
}

/// Bayer offsets `(dy, dx)` of the R, G, G, B planes.
pub const RGGB: [(usize, usize, usize); 4] = [(0, 0, 0), (1, 0, 1), (1, 1, 0), (2, 1, 1)];

fn even_dims(shape: &[usize], channels: usize, op: &'static str) -> Result<(usize, usize)> {
    if shape.len() != 3 || shape[0] != channels || shape[1] % 2 != 0 || shape[2] % 2 != 0 {
        return Err(TensorError::InvalidGeometry {
            op,
            detail: format!("expected [{channels}, even H, even W], got {shape:?}"),
        });
    }
    Ok((shape[1], shape[2]))
}

/// `[3, H, W] → [4, H/2, W/2]`: R at (even, even), G at (even, odd), G at
/// (odd, even), B at (odd, odd).
pub fn mosaic_rggb(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w) = even_dims(x.shape(), 3, "mosaic_rggb")?;
    let (hh, hw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(4 * hh * hw);
    for &(c, dy, dx) in &RGGB {
        for y in 0..hh {
            for xx in 0..hw {
                out.push(x.data()[(c * h + 2 * y + dy) * w + 2 * xx + dx]);
            }
        }
    }
    Tensor::new(vec![4, hh, hw], out)
}

/// Places each RGGB plane back on its Bayer sites of a zero `[3, H, W]`
/// image; the two green planes fill disjoint sites of the green channel.
pub fn unmosaic_rggb(raw: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = raw.shape();
    if s.len() != 3 || s[0] != 4 {
        return Err(TensorError::InvalidGeometry {
            op: "unmosaic_rggb",
            detail: format!("expected [4, h, w], got {s:?}"),
        });
    }
    let (hh, hw) = (s[1], s[2]);
    let (h, w) = (2 * hh, 2 * hw);
    let mut out = vec![0.0f32; 3 * h * w];
    for (plane, &(c, dy, dx)) in RGGB.iter().enumerate() {
        for y in 0..hh {
            for x in 0..hw {
                out[(c * h + 2 * y + dy) * w + 2 * x + dx] = raw.data()[(plane * hh + y) * hw + x];
            }
        }
    }
    Tensor::new(vec![3, h, w], out)
}

/// Sample `id` of a dataset seeded with `global_seed`. Each sample draws from
/// its own ChaCha stream, so samples are independent of generation order.
pub fn make_sample(global_seed: u64, id: u64, size: usize) -> Result<MoireSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(global_seed);
    rng.set_stream(id);
    let clean = synth_clean(rng.random(), size)?;
    let params = DegradationParams::sample(&mut rng);
    let degraded = apply_moire(&clean, &params)?;
    let raw = mosaic_rggb(&degraded)?;
    Ok(MoireSample {
        id,
        raw,
        clean,
        degraded,
        params,
    })
}
