use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fm_sample_pair_with, TimeSampling};
use crate::net::{Bound, Conv, Init, Linear, ParamStore};
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};
use crate::train::{stack, AdamW, AdamWConfig, Checkpoint, CheckpointKind, EpochRecord};

/// A time-dependent vector field on batches `[N, ..]` with one time per
/// sample.
pub trait VelocityField {
    fn velocity(&self, x: &Tensor<f32>, t: &[f64]) -> Result<Tensor<f32>>;

    /// The same time for every sample.
    fn velocity_at(&self, x: &Tensor<f32>, t: f64) -> Result<Tensor<f32>> {
        let n = x.shape().first().copied().unwrap_or(1);
        self.velocity(x, &vec![t; n])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum VelocityArch {
    /// Images `[N, C, H, W]`; the time is appended as a constant channel.
    Conv { channels: usize, width: usize, layers: usize },
    /// Vectors `[N, D]`; the time is appended as a feature.
    Mlp { dim: usize, width: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityConfig {
    pub arch: VelocityArch,
    pub seed: u64,
}

impl Default for VelocityConfig {
    fn default() -> Self {
        Self {
            arch: VelocityArch::Conv {
                channels: 3,
                width: 48,
                layers: 6,
            },
            seed: 0,
        }
    }
}

/// Conv or MLP velocity network. The output layer starts at zero, so a
/// fresh network is the zero field.
#[derive(Debug, Clone)]
pub struct VelocityNet {
    cfg: VelocityConfig,
    store: ParamStore<f32>,
    convs: Vec<Conv>,
    linears: Vec<Linear>,
}

impl VelocityNet {
    pub fn new(cfg: VelocityConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let (mut convs, mut linears) = (Vec::new(), Vec::new());
        match cfg.arch {
            VelocityArch::Conv { channels, width, layers } => {
                if layers < 2 || channels == 0 || width == 0 {
                    return Err(TensorError::InvalidGeometry {
                        op: "velocity net",
                        detail: format!("need ≥ 2 layers and positive widths, got {:?}", cfg.arch),
                    });
                }
                for l in 0..layers {
                    let cin = if l == 0 { channels + 1 } else { width };
                    let (cout, init) = if l + 1 == layers { (channels, Init::Zero) } else { (width, Init::He) };
                    convs.push(Conv::new(&mut store, &format!("vel.conv{l}"), cin, cout, 3, 1, init, &mut rng));
                }
            }
            VelocityArch::Mlp { dim, width } => {
                if dim == 0 || width == 0 {
                    return Err(TensorError::InvalidGeometry {
                        op: "velocity net",
                        detail: format!("positive widths required, got {:?}", cfg.arch),
                    });
                }
                linears.push(Linear::new(&mut store, "vel.fc0", dim + 1, width, Init::He, &mut rng));
                linears.push(Linear::new(&mut store, "vel.fc1", width, width, Init::He, &mut rng));
                linears.push(Linear::new(&mut store, "vel.fc2", width, dim, Init::Zero, &mut rng));
            }
        }
        Ok(Self {
            cfg,
            store,
            convs,
            linears,
        })
    }

    pub fn config(&self) -> &VelocityConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    pub fn load_params(&mut self, store: ParamStore<f32>) -> Result<()> {
        for (name, v) in self.store.iter() {
            if store.get(name)?.shape() != v.shape() {
                return Err(TensorError::MissingParam(format!("{name} {:?}", v.shape())));
            }
        }
        if store.len() != self.store.len() {
            return Err(TensorError::MissingParam("unexpected extra parameters".into()));
        }
        self.store = store;
        Ok(())
    }

    fn check(&self, shape: &[usize], t: &[f64]) -> Result<()> {
        let ok = match self.cfg.arch {
            VelocityArch::Conv { channels, .. } => shape.len() == 4 && shape[1] == channels,
            VelocityArch::Mlp { dim, .. } => shape.len() == 2 && shape[1] == dim,
        };
        if !ok || shape[0] != t.len() {
            return Err(TensorError::ShapeMismatch {
                op: "velocity input",
                lhs: shape.to_vec(),
                rhs: vec![t.len()],
            });
        }
        Ok(())
    }

    /// Differentiable forward pass.
    pub fn forward<'t>(&self, p: &Bound<'t, f32>, x: Var<'t, f32>, t: &[f64]) -> Result<Var<'t, f32>> {
        let shape = x.shape().to_vec();
        self.check(&shape, t)?;
        let tape = x.tape();
        match self.cfg.arch {
            VelocityArch::Conv { .. } => {
                let (h, w) = (shape[2], shape[3]);
                let tc: Vec<f32> = t.iter().flat_map(|&ti| std::iter::repeat_n(ti as f32, h * w)).collect();
                let tc = tape.constant(Tensor::new(vec![shape[0], 1, h, w], tc)?);
                let mut y = Var::concat(&[x, tc], 1)?;
                for (l, conv) in self.convs.iter().enumerate() {
                    y = conv.forward(p, y)?;
                    if l + 1 < self.convs.len() {
                        y = y.gelu();
                    }
                }
                Ok(y)
            }
            VelocityArch::Mlp { .. } => {
                let tc: Vec<f32> = t.iter().map(|&ti| ti as f32).collect();
                let tc = tape.constant(Tensor::new(vec![shape[0], 1], tc)?);
                let mut y = Var::concat(&[x, tc], 1)?;
                for (l, fc) in self.linears.iter().enumerate() {
                    y = fc.forward(p, y)?;
                    if l + 1 < self.linears.len() {
                        y = y.gelu();
                    }
                }
                Ok(y)
            }
        }
    }
}

impl VelocityField for VelocityNet {
    fn velocity(&self, x: &Tensor<f32>, t: &[f64]) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let y = self.forward(&p, tape.constant(x.clone()), t)?;
        Ok(y.value())
    }
}

/// Mean squared error between `v(x_t, t)` and the path target `u`.
pub fn fm_loss<'t>(vf: &VelocityNet, p: &Bound<'t, f32>, x_t: Var<'t, f32>, t: &[f64], u: Var<'t, f32>) -> Result<Var<'t, f32>> {
    Ok(vf.forward(p, x_t, t)?.sub(u)?.square().mean())
}

/// One optimizer step on a clean batch `x1`; returns the batch loss.
pub fn fm_train_step(
    vf: &mut VelocityNet,
    opt: &mut AdamW,
    x1: &Tensor<f32>,
    lr: f64,
    sampling: TimeSampling,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let pair = fm_sample_pair_with(x1, sampling, rng)?;
    let tape = Tape::new();
    let p = vf.store.bind(&tape);
    let loss = fm_loss(vf, &p, tape.constant(pair.x_t), &pair.t, tape.constant(pair.u))?;
    let value = loss.value().item() as f64;
    let grads = p.grads(&tape.backward(loss)?);
    opt.update(&mut vf.store, &grads, lr)?;
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocityTrainConfig {
    pub velocity: VelocityConfig,
    pub lr: f64,
    pub adamw: AdamWConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Side of the random square crops trained on; 0 uses whole images.
    pub crop: usize,
    pub time_sampling: TimeSampling,
    pub seed: u64,
}

impl Default for VelocityTrainConfig {
    fn default() -> Self {
        Self {
            velocity: VelocityConfig::default(),
            lr: 1e-3,
            adamw: AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            epochs: 20,
            batch_size: 16,
            crop: 32,
            time_sampling: TimeSampling::Late { min: 0.5 },
            seed: 0,
        }
    }
}

impl VelocityTrainConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err("velocity training needs lr > 0 and batch_size > 0".into());
        }
        if let TimeSampling::Late { min } = self.time_sampling {
            if !(0.0..1.0).contains(&min) {
                return Err(format!("late time sampling needs 0 ≤ min < 1, got {min}"));
            }
        }
        Ok(())
    }
}

/// Random `side × side` crop of a `[C, H, W]` image.
fn crop<R: rand::Rng + ?Sized>(img: &Tensor<f32>, side: usize, rng: &mut R) -> Result<Tensor<f32>> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    if side == 0 || (side == h && side == w) {
        return Ok(img.clone());
    }
    if side > h || side > w {
        return Err(TensorError::InvalidGeometry {
            op: "velocity crop",
            detail: format!("crop {side} exceeds image {h}×{w}"),
        });
    }
    let y = rng.random_range(0..=h - side);
    let x = rng.random_range(0..=w - side);
    img.narrow(1, y, side)?.narrow(2, x, side)
}

/// Flow-matching training state over clean `[C, H, W]` images.
#[derive(Debug, Clone)]
pub struct VelocityTrainer {
    pub cfg: VelocityTrainConfig,
    pub net: VelocityNet,
    pub opt: AdamW,
    pub history: Vec<EpochRecord>,
}

impl VelocityTrainer {
    pub fn new(cfg: VelocityTrainConfig) -> crate::Result<Self> {
        cfg.validate().map_err(crate::Error::Config)?;
        Ok(Self {
            net: VelocityNet::new(cfg.velocity)?,
            opt: AdamW::new(cfg.adamw),
            history: Vec::new(),
            cfg,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> crate::Result<Self> {
        if ckpt.kind != CheckpointKind::Velocity {
            return Err(crate::Error::Config("checkpoint does not hold a velocity field".into()));
        }
        let mut t = Self::new(ckpt.config_as()?)?;
        t.net.load_params(ckpt.params.clone())?;
        if let Some(opt) = &ckpt.optimizer {
            t.opt = opt.clone();
        }
        t.history = ckpt.history.clone();
        Ok(t)
    }

    pub fn checkpoint(&self) -> crate::Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CheckpointKind::Velocity,
            epoch: self.history.len(),
            config: serde_json::to_value(&self.cfg).map_err(|e| crate::Error::Config(e.to_string()))?,
            params: self.net.params().clone(),
            optimizer: Some(self.opt.clone()),
            scheduler: None,
            history: self.history.clone(),
        })
    }

    pub fn finished(&self) -> bool {
        self.history.len() >= self.cfg.epochs
    }

    /// One pass over `train`; the validation loss uses fixed noise so
    /// epochs are comparable.
    pub fn run_epoch(&mut self, train: &[Tensor<f32>], val: &[Tensor<f32>]) -> crate::Result<EpochRecord> {
        if train.is_empty() {
            return Err(crate::Error::Data("velocity training needs images".into()));
        }
        let epoch = self.history.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0);
        for (step, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let crops = chunk
                .iter()
                .map(|&i| crop(&train[i], self.cfg.crop, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let batch = stack(&crops.iter().collect::<Vec<_>>())?;
            let loss = fm_train_step(&mut self.net, &mut self.opt, &batch, self.cfg.lr, self.cfg.time_sampling, &mut rng)?;
            if !loss.is_finite() {
                return Err(crate::Error::NonFiniteLoss { epoch, step });
            }
            total += loss;
            batches += 1;
        }
        let mut vrng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x7a1);
        let mut val_loss = 0.0;
        for img in val {
            let x1 = stack(&[img])?;
            let pair = fm_sample_pair_with(&x1, self.cfg.time_sampling, &mut vrng)?;
            let v = self.net.velocity(&pair.x_t, &pair.t)?;
            val_loss += v.sub(&pair.u)?.map(|d| d * d).mean() as f64;
        }
        let record = EpochRecord {
            epoch,
            phase: 1,
            lr: self.cfg.lr,
            train_loss: total / batches as f64,
            val_loss: if val.is_empty() { total / batches as f64 } else { val_loss / val.len() as f64 },
            val_psnr: None,
            val_ssim: None,
        };
        self.history.push(record.clone());
        Ok(record)
    }
}
