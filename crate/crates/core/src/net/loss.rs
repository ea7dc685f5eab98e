//! Training objectives.
//!
//! Per scale the supervised loss is `0.7·L1 + 0.3·P`, where `L1` is the mean
//! absolute error and `P` the perceptual term: the sum over a fixed layer set
//! of mean absolute differences between feature maps of a frozen stack of
//! random convolutions. The stack is seeded with [`SURROGATE_SEED`]:
//! `conv3×3(3→8) → ReLU` then `conv3×3/2(8→16) → ReLU`, He-normal weights,
//! zero biases, both ReLU outputs compared. Half and quarter targets are
//! bilinear downsamplings of the full-resolution ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv, Init};
use super::{ParamStore, TripleOutput};
use crate::tensor::{Conv2dSpec, Result, Scalar, Tensor, TensorError, Var};

pub const L1_WEIGHT: f64 = 0.7;
pub const PERCEPTUAL_WEIGHT: f64 = 0.3;
pub const SURROGATE_SEED: u64 = 0x5eed_f00d;

/// Feature extractor of the perceptual term.
#[derive(Debug, Clone)]
pub enum Perceptual<T: Scalar = f32> {
    /// `φ(x) = [x]`, which turns the perceptual term into plain L1.
    Identity,
    RandomConv(FeatureStack<T>),
}

impl<T: Scalar> Perceptual<T> {
    pub fn surrogate() -> Self {
        Perceptual::RandomConv(FeatureStack::new(SURROGATE_SEED))
    }

    fn features<'t>(&self, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        match self {
            Perceptual::Identity => Ok(vec![x]),
            Perceptual::RandomConv(stack) => stack.features(x),
        }
    }

    /// `Σ_l mean |φ_l(pred) − φ_l(gt)|`.
    pub fn distance<'t>(&self, pred: Var<'t, T>, gt: Var<'t, T>) -> Result<Var<'t, T>> {
        let (fp, fg) = (self.features(pred)?, self.features(gt)?);
        let mut total: Option<Var<'t, T>> = None;
        for (a, b) in fp.into_iter().zip(fg) {
            let d = a.sub(b)?.abs().mean();
            total = Some(match total {
                Some(t) => t.add(d)?,
                None => d,
            });
        }
        Ok(total.expect("at least one layer"))
    }
}

/// Frozen random convolutions.
#[derive(Debug, Clone)]
pub struct FeatureStack<T: Scalar = f32> {
    store: ParamStore<T>,
    layers: Vec<Conv>,
}

impl<T: Scalar> FeatureStack<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layers = vec![
            Conv::new(&mut store, "p0", 3, 8, 3, 1, Init::He, &mut rng),
            Conv::new(&mut store, "p1", 8, 16, 3, 2, Init::He, &mut rng),
        ];
        Self { store, layers }
    }

    pub fn features<'t>(&self, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let p = self.store.bind_frozen(x.tape());
        let mut out = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for layer in &self.layers {
            cur = layer.forward(&p, cur)?.relu();
            out.push(cur);
        }
        Ok(out)
    }
}

/// The two weighted terms at one scale.
#[derive(Debug, Clone, Copy)]
pub struct ScaleTerms<'t, T: Scalar> {
    pub l1: Var<'t, T>,
    pub perceptual: Var<'t, T>,
}

impl<'t, T: Scalar> ScaleTerms<'t, T> {
    pub fn weighted(&self) -> Result<Var<'t, T>> {
        self.l1.scale(T::of(L1_WEIGHT)).add(self.perceptual.scale(T::of(PERCEPTUAL_WEIGHT)))
    }
}

fn same_shape<T: Scalar>(a: &Var<'_, T>, b: &Var<'_, T>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

/// Unweighted L1 and perceptual terms at one resolution.
pub fn scale_terms<'t, T: Scalar>(pred: Var<'t, T>, gt: Var<'t, T>, perceptual: &Perceptual<T>) -> Result<ScaleTerms<'t, T>> {
    same_shape(&pred, &gt, "scale loss")?;
    Ok(ScaleTerms {
        l1: pred.sub(gt)?.abs().mean(),
        perceptual: perceptual.distance(pred, gt)?,
    })
}

/// Sum over the three scales of `0.7·L1 + 0.3·P`; `gt` is full resolution.
pub fn total_loss<'t, T: Scalar>(pred: &TripleOutput<Var<'t, T>>, gt: Var<'t, T>, perceptual: &Perceptual<T>) -> Result<Var<'t, T>> {
    same_shape(&pred.full, &gt, "total_loss")?;
    let targets = [gt, gt.bilinear_resize(0.5)?, gt.bilinear_resize(0.25)?];
    let mut total = scale_terms(pred.full, targets[0], perceptual)?.weighted()?;
    for (p, g) in [(pred.half, targets[1]), (pred.quarter, targets[2])] {
        total = total.add(scale_terms(p, g, perceptual)?.weighted()?)?;
    }
    Ok(total)
}

fn haar_kernel<T: Scalar>() -> Tensor<T> {
    let h = 0.5;
    #[rustfmt::skip]
    let k = [
        h, h, h, h,    // LL
        h, h, -h, -h,  // LH: top minus bottom
        h, -h, h, -h,  // HL: left minus right
        h, -h, -h, h,  // HH
    ];
    Tensor::from_f64(vec![4, 1, 2, 2], &k).expect("static shape")
}

fn check_even(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize)> {
    if shape.len() != 4 || shape[2] % 2 != 0 || shape[3] % 2 != 0 {
        return Err(TensorError::InvalidGeometry {
            op,
            detail: format!("need [N, C, H, W] with even H and W, got {shape:?}"),
        });
    }
    Ok((shape[0], shape[1], shape[2], shape[3]))
}

/// Orthonormal single-level Haar analysis: `[N, C, H, W] → [N, C, 4, H/2, W/2]`
/// with subbands ordered LL, LH, HL, HH. On a constant image LL carries gain 2.
pub fn haar_analysis<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_even(x.shape(), "haar_analysis")?;
    let planes = x.reshape(vec![n * c, 1, h, w])?;
    let bands = crate::tensor::conv2d(&planes, &haar_kernel(), Conv2dSpec::new(2, 0))?;
    bands.reshape(vec![n, c, 4, h / 2, w / 2])
}

/// Inverse (transpose) of [`haar_analysis`].
pub fn haar_synthesis<T: Scalar>(bands: &Tensor<T>) -> Result<Tensor<T>> {
    let s = bands.shape();
    if s.len() != 5 || s[2] != 4 {
        return Err(TensorError::InvalidGeometry {
            op: "haar_synthesis",
            detail: format!("need [N, C, 4, h, w], got {s:?}"),
        });
    }
    let (n, c, h, w) = (s[0], s[1], s[3], s[4]);
    let k = haar_kernel::<T>();
    let mut out = vec![T::zero(); n * c * 4 * h * w];
    let d = bands.data();
    for plane in 0..n * c {
        for y in 0..h {
            for x in 0..w {
                for b in 0..4 {
                    let v = d[((plane * 4 + b) * h + y) * w + x];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            out[(plane * 2 * h + 2 * y + dy) * 2 * w + 2 * x + dx] += v * k.data()[b * 4 + dy * 2 + dx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c, 2 * h, 2 * w], out)
}

/// Sum over the four Haar subbands of the mean absolute subband difference.
/// Images differing by a constant `c` give `2c`, all of it from LL.
pub fn wavelet_loss<'t, T: Scalar>(pred: Var<'t, T>, gt: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape(&pred, &gt, "wavelet_loss")?;
    let (n, c, h, w) = check_even(&pred.shape(), "wavelet_loss")?;
    let kernel = pred.tape().constant(haar_kernel());
    let diff = pred.sub(gt)?.reshape(vec![n * c, 1, h, w])?;
    let bands = diff.conv2d(kernel, None, Conv2dSpec::new(2, 0))?;
    // Equal-sized subbands: the per-band means sum to 4 × the overall mean.
    Ok(bands.abs().mean().scale(T::of(4.0)))
}
