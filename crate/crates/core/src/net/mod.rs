//! The restoration network.
//!
//! Input is a packed RGGB mosaic `[N, 4·frames, H/2, W/2]`; output is sRGB at
//! full (`H × W`), half and quarter resolution.
//!
//! * Shallow stage: two 3×3 convolutions then a stack of affine coupling
//!   blocks ([`inn`]).
//! * Deep stage: the shallow features are resampled bilinearly to scales 1,
//!   0.5 and 0.25; each scale passes a frequency gate ([`lfef`]) and TTT
//!   blocks ([`ttt_block`]).
//! * Reconstruction runs coarse to fine. At each scale a decoder conv sees the
//!   scale's features plus the upsampled decoder state of the coarser scale,
//!   and a head predicts a 2×-upsampled (pixel shuffle) sRGB residual that is
//!   added to the upsampled residual of the coarser scale. The residual is
//!   applied on top of a fixed mosaic-to-RGB estimate `(R, (G₁+G₂)/2, B)`
//!   resampled to each output size.
//!
//! Heads, coupling outputs and TTT unembeddings start at zero, so a fresh
//! network outputs the mosaic-to-RGB estimate.

mod inn;
mod layers;
mod lfef;
mod loss;
mod params;
mod ttt_block;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use inn::{Inn, InnBlock};
pub use layers::{Conv, Init, Linear};
pub use lfef::{lfef_apply, LfefFilter};
pub use loss::{
    haar_analysis, haar_synthesis, scale_terms, total_loss, wavelet_loss, FeatureStack, Perceptual, ScaleTerms,
    L1_WEIGHT, PERCEPTUAL_WEIGHT, SURROGATE_SEED,
};
pub use params::{Bound, ParamStore};
pub use ttt_block::{patchify, unpatchify, TttBlock, TttBlockDims};

use crate::attention::ScanOrder;
use crate::tensor::{Conv2dSpec, Result, Scalar, Tape, Tensor, TensorError, Var};

/// Feature-pyramid scales, finest first.
pub const SCALES: [f64; 3] = [1.0, 0.5, 0.25];

/// One value per output resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleOutput<V> {
    pub full: V,
    pub half: V,
    pub quarter: V,
}

impl<V> TripleOutput<V> {
    pub fn map<U>(self, mut f: impl FnMut(V) -> U) -> TripleOutput<U> {
        TripleOutput {
            full: f(self.full),
            half: f(self.half),
            quarter: f(self.quarter),
        }
    }
}

impl<'t, T: Scalar> TripleOutput<Var<'t, T>> {
    pub fn values(&self) -> TripleOutput<Tensor<T>> {
        (*self).map(|v| v.value())
    }
}

/// Which learnable blocks are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    /// Coupling blocks kept, frequency gates removed.
    NoLfef,
    /// Neither coupling blocks nor frequency gates.
    NoInn,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoLfef, Ablation::NoInn];

    pub fn apply(self, cfg: &NetworkConfig) -> NetworkConfig {
        let mut out = cfg.clone();
        out.use_inn = self != Ablation::NoInn;
        out.use_lfef = self == Ablation::Full;
        out
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoLfef => "no-lfef",
            Ablation::NoInn => "no-inn",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown ablation `{s}` (full, no-lfef, no-inn)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Side of the full-resolution sRGB output; the mosaic is half of it.
    pub image_size: usize,
    pub channels: usize,
    pub inn_blocks: usize,
    pub inn_hidden: usize,
    pub patch: usize,
    pub ttt_model_dim: usize,
    pub ttt_key_dim: usize,
    pub ttt_blocks: usize,
    pub ttt_eta: f64,
    pub scan_order: ScanOrder,
    /// 1 for single-image input; 3 concatenates the ±1 neighbor mosaics.
    pub frames: usize,
    pub use_inn: bool,
    pub use_lfef: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 16,
            inn_blocks: 2,
            inn_hidden: 16,
            patch: 4,
            ttt_model_dim: 32,
            ttt_key_dim: 32,
            ttt_blocks: 1,
            ttt_eta: 0.1,
            scan_order: ScanOrder::Causal,
            frames: 1,
            use_inn: true,
            use_lfef: true,
        }
    }
}

impl NetworkConfig {
    /// Side of the packed mosaic input.
    pub fn input_size(&self) -> usize {
        self.image_size / 2
    }

    /// Feature side at pyramid level `i` (0 = finest).
    pub fn feature_size(&self, level: usize) -> usize {
        self.input_size() >> level
    }

    pub fn validate(&self) -> Result<(), String> {
        let s = self.image_size;
        if !s.is_power_of_two() || s < 8 {
            return Err(format!("image_size must be a power of two ≥ 8, got {s}"));
        }
        let coarsest = self.feature_size(SCALES.len() - 1);
        if self.patch == 0 || coarsest % self.patch != 0 {
            return Err(format!(
                "patch {} must divide the coarsest feature side {coarsest} (image_size / 8)",
                self.patch
            ));
        }
        if self.channels < 2 {
            return Err(format!("channels must be ≥ 2, got {}", self.channels));
        }
        if self.ttt_model_dim == 0 || self.ttt_key_dim == 0 || self.inn_hidden == 0 {
            return Err("ttt_model_dim, ttt_key_dim and inn_hidden must be positive".into());
        }
        if self.frames == 0 || self.frames % 2 == 0 {
            return Err(format!("frames must be odd, got {}", self.frames));
        }
        if !(self.ttt_eta > 0.0 && self.ttt_eta < 1.0) {
            return Err(format!("ttt_eta must lie in (0, 1), got {}", self.ttt_eta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Level {
    lfef: Option<LfefFilter>,
    ttt: Vec<TttBlock>,
    decoder: Conv,
    head: Conv,
}

/// The restoration network and its parameters.
#[derive(Debug, Clone)]
pub struct DemoireNet<T: Scalar = f32> {
    cfg: NetworkConfig,
    store: ParamStore<T>,
    shallow: [Conv; 2],
    inn: Option<Inn>,
    levels: Vec<Level>,
}

fn invalid(detail: String) -> TensorError {
    TensorError::InvalidGeometry { op: "demoire", detail }
}

impl<T: Scalar> DemoireNet<T> {
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate().map_err(invalid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = cfg.channels;
        let shallow = [
            Conv::new(&mut store, "sfe.conv0", 4 * cfg.frames, c, 3, 1, Init::He, &mut rng),
            Conv::new(&mut store, "sfe.conv1", c, c, 3, 1, Init::He, &mut rng),
        ];
        let inn = if cfg.use_inn && cfg.inn_blocks > 0 {
            Some(Inn::new(&mut store, "sfe.inn", c, cfg.inn_hidden, cfg.inn_blocks, &mut rng)?)
        } else {
            None
        };
        let mut levels = Vec::with_capacity(SCALES.len());
        for level in 0..SCALES.len() {
            let side = cfg.feature_size(level);
            let lfef = if cfg.use_lfef {
                Some(LfefFilter::new(&mut store, &format!("dfe.{level}.lfef"), c, side, side)?)
            } else {
                None
            };
            let dims = TttBlockDims {
                channels: c,
                patch: cfg.patch,
                model_dim: cfg.ttt_model_dim,
                key_dim: cfg.ttt_key_dim,
                eta: cfg.ttt_eta,
                order: cfg.scan_order,
            };
            let ttt = (0..cfg.ttt_blocks)
                .map(|b| TttBlock::new(&mut store, &format!("dfe.{level}.ttt{b}"), dims, &mut rng))
                .collect();
            let decoder = Conv::new(&mut store, &format!("rec.{level}.decoder"), c, c, 3, 1, Init::He, &mut rng);
            let head = Conv::new(&mut store, &format!("rec.{level}.head"), c, 12, 3, 1, Init::Zero, &mut rng);
            levels.push(Level { lfef, ttt, decoder, head });
        }
        Ok(Self {
            cfg,
            store,
            shallow,
            inn,
            levels,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Replaces all parameters; names and shapes must match the current set.
    pub fn load_params(&mut self, store: ParamStore<T>) -> Result<()> {
        let mine: Vec<_> = self.store.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect();
        let theirs: Vec<_> = store.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect();
        if mine != theirs {
            let missing = mine.iter().find(|m| !theirs.contains(m)).or_else(|| theirs.iter().find(|t| !mine.contains(t)));
            return Err(TensorError::MissingParam(
                missing.map(|(k, s)| format!("{k} {s:?}")).unwrap_or_default(),
            ));
        }
        self.store = store;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn inn(&self) -> Option<&Inn> {
        self.inn.as_ref()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = self.cfg.input_size();
        let want = [4 * self.cfg.frames, s, s];
        if shape.len() != 4 || shape[1..] != want {
            return Err(TensorError::ShapeMismatch {
                op: "demoire input",
                lhs: want.to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Shallow convs only, before the coupling stack.
    pub fn embed<'t>(&self, p: &Bound<'t, T>, raw: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_input(&raw.shape())?;
        let h = self.shallow[0].forward(p, raw)?.gelu();
        self.shallow[1].forward(p, h)
    }

    /// Shallow features: convolutional embedding then the coupling stack.
    pub fn sfe<'t>(&self, p: &Bound<'t, T>, raw: Var<'t, T>) -> Result<Var<'t, T>> {
        let e = self.embed(p, raw)?;
        match &self.inn {
            Some(inn) => Ok(inn.forward(p, e)?.0),
            None => Ok(e),
        }
    }

    /// Features at scales 1, 0.5 and 0.25 (finest first).
    pub fn dfe<'t>(&self, p: &Bound<'t, T>, shallow: Var<'t, T>) -> Result<[Var<'t, T>; 3]> {
        let mut out = Vec::with_capacity(SCALES.len());
        for (level, &scale) in self.levels.iter().zip(&SCALES) {
            let mut f = shallow.bilinear_resize(scale)?;
            if let Some(g) = &level.lfef {
                f = g.forward(p, f)?;
            }
            for block in &level.ttt {
                f = block.forward(p, f)?;
            }
            out.push(f);
        }
        Ok([out[0], out[1], out[2]])
    }

    /// Fixed mosaic-to-RGB estimate `(R, (G₁+G₂)/2, B)` of the centre frame,
    /// at the mosaic's resolution (the half output size).
    pub fn mosaic_rgb<'t>(&self, raw: Var<'t, T>) -> Result<Var<'t, T>> {
        let centre = raw.narrow(1, 4 * (self.cfg.frames / 2), 4)?;
        #[rustfmt::skip]
        let k = [
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.5, 0.5, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ];
        let kernel = raw.tape().constant(Tensor::from_f64(vec![3, 4, 1, 1], &k)?);
        centre.conv2d(kernel, None, Conv2dSpec::new(1, 0))
    }

    /// Coarse-to-fine heads producing the three sRGB outputs.
    pub fn reconstruct<'t>(&self, p: &Bound<'t, T>, raw: Var<'t, T>, feats: &[Var<'t, T>; 3]) -> Result<TripleOutput<Var<'t, T>>> {
        let mut state: Option<Var<'t, T>> = None;
        let mut residual: Option<Var<'t, T>> = None;
        let mut residuals = Vec::with_capacity(3);
        for (level, f) in self.levels.iter().zip(feats).rev() {
            let x = match state {
                Some(s) => f.add(s.bilinear_resize(2.0)?)?,
                None => *f,
            };
            let d = level.decoder.forward(p, x)?.gelu();
            let mut r = level.head.forward(p, d)?.pixel_shuffle(2)?;
            if let Some(prev) = residual {
                r = r.add(prev.bilinear_resize(2.0)?)?;
            }
            state = Some(d);
            residual = Some(r);
            residuals.push(r);
        }
        let base = self.mosaic_rgb(raw)?;
        let (rq, rh, rf) = (residuals[0], residuals[1], residuals[2]);
        Ok(TripleOutput {
            full: base.bilinear_resize(2.0)?.add(rf)?,
            half: base.add(rh)?,
            quarter: base.bilinear_resize(0.5)?.add(rq)?,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t, T>, raw: Var<'t, T>) -> Result<TripleOutput<Var<'t, T>>> {
        let shallow = self.sfe(p, raw)?;
        let feats = self.dfe(p, shallow)?;
        self.reconstruct(p, raw, &feats)
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, raw: &Tensor<T>) -> Result<TripleOutput<Tensor<T>>> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        Ok(self.forward(&p, tape.constant(raw.clone()))?.values())
    }

    /// Shallow features of a plain tensor.
    pub fn sfe_tensor(&self, raw: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        Ok(self.sfe(&p, tape.constant(raw.clone()))?.value())
    }

    /// Deep features of plain shallow features.
    pub fn dfe_tensor(&self, shallow: &Tensor<T>) -> Result<[Tensor<T>; 3]> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let f = self.dfe(&p, tape.constant(shallow.clone()))?;
        Ok([f[0].value(), f[1].value(), f[2].value()])
    }
}
