use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointKind, EpochRecord};
use super::metrics::{evaluate_pair, psnr, ssim, MetricsReport};
use super::optim::{AdamW, AdamWConfig, PlateauConfig, PlateauScheduler};
use crate::error::{Error, Result};
use crate::net::{total_loss, wavelet_loss, DemoireNet, NetworkConfig, Perceptual};
use crate::synth::MoireSample;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerceptualKind {
    /// Frozen seeded conv feature stack.
    Surrogate,
    /// Plain L1 on pixels.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub lr: f64,
    pub adamw: AdamWConfig,
    pub plateau: PlateauConfig,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub batch_size: usize,
    pub wavelet_weight: f64,
    pub perceptual: PerceptualKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            lr: 3e-4,
            adamw: AdamWConfig::default(),
            plateau: PlateauConfig::default(),
            phase1_epochs: 40,
            phase2_epochs: 10,
            batch_size: 8,
            wavelet_weight: 1.0,
            perceptual: PerceptualKind::Surrogate,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Epoch counts of the full-length schedule.
    pub fn paper_scale() -> Self {
        Self {
            phase1_epochs: 175,
            phase2_epochs: 41,
            ..Self::default()
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.phase1_epochs + self.phase2_epochs
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.network.validate()?;
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) {
            return Err(format!("plateau factor must lie in (0, 1), got {}", p.factor));
        }
        if !(self.lr > 0.0) || p.min_lr > self.lr {
            return Err(format!("need 0 < min_lr ≤ lr, got min_lr {} and lr {}", p.min_lr, self.lr));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        Ok(())
    }
}

/// Stacks `[C, H, W]` tensors into `[N, C, H, W]`.
pub fn stack(items: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let reshaped: Vec<Tensor<f32>> = items
        .iter()
        .map(|t| {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            t.reshape(s)
        })
        .collect::<std::result::Result<_, _>>()?;
    let refs: Vec<&Tensor<f32>> = reshaped.iter().collect();
    Ok(Tensor::concat(&refs, 0)?)
}

fn clip01(x: &Tensor<f32>) -> Tensor<f32> {
    x.map(|v| v.clamp(0.0, 1.0))
}

/// Metrics of the clipped full-resolution predictions.
pub fn evaluate_network(net: &DemoireNet, samples: &[MoireSample]) -> Result<MetricsReport> {
    let start = Instant::now();
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let raw = stack(&[&s.raw])?;
        let pred = clip01(&net.predict(&raw)?.full);
        let pred = pred.reshape(s.clean.shape().to_vec())?;
        rows.push(evaluate_pair(format!("{:05}", s.id), &pred, &s.clean)?);
    }
    Ok(MetricsReport::from_rows(rows, start.elapsed().as_secs_f64() * 1e3))
}

/// Metrics of the degraded inputs against their clean targets.
pub fn input_metrics(samples: &[MoireSample]) -> Result<MetricsReport> {
    let rows = samples
        .iter()
        .map(|s| evaluate_pair(format!("{:05}", s.id), &s.degraded, &s.clean))
        .collect::<std::result::Result<_, _>>()?;
    Ok(MetricsReport::from_rows(rows, 0.0))
}

type BatchResult = (f64, Option<BTreeMap<String, Tensor<f32>>>, Tensor<f32>);

/// Owns the network, optimizer and schedule across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: DemoireNet,
    pub opt: AdamW,
    pub sched: PlateauScheduler,
    pub history: Vec<EpochRecord>,
    perceptual: Perceptual,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate().map_err(Error::Config)?;
        let net = DemoireNet::new(cfg.network.clone(), cfg.seed)?;
        Ok(Self {
            opt: AdamW::new(cfg.adamw),
            sched: PlateauScheduler::new(cfg.lr, cfg.plateau),
            history: Vec::new(),
            perceptual: perceptual(cfg.perceptual),
            net,
            cfg,
        })
    }

    /// Restores the full training state saved by [`Trainer::checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CheckpointKind::Network {
            return Err(Error::Config("checkpoint does not hold a restoration network".into()));
        }
        let cfg: TrainConfig = ckpt.config_as()?;
        let mut t = Self::new(cfg)?;
        t.net.load_params(ckpt.params.clone())?;
        if let Some(opt) = &ckpt.optimizer {
            t.opt = opt.clone();
        }
        if let Some(s) = ckpt.scheduler {
            t.sched = s;
        }
        t.history = ckpt.history.clone();
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CheckpointKind::Network,
            epoch: self.history.len(),
            config: serde_json::to_value(&self.cfg).map_err(|e| Error::Config(e.to_string()))?,
            params: self.net.params().clone(),
            optimizer: Some(self.opt.clone()),
            scheduler: Some(self.sched),
            history: self.history.clone(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn finished(&self) -> bool {
        self.epochs_done() >= self.cfg.total_epochs()
    }

    /// Lowest validation loss so far.
    pub fn best_val_loss(&self) -> Option<f64> {
        self.history.iter().map(|r| r.val_loss).fold(None, |b, v| Some(b.map_or(v, |b: f64| b.min(v))))
    }

    /// Loss value, gradients when `tracked`, and the full-resolution output.
    fn batch_loss(&self, raw: &Tensor<f32>, clean: &Tensor<f32>, phase: u8, tracked: bool) -> Result<BatchResult> {
        let tape = Tape::new();
        let p = if tracked { self.net.params().bind(&tape) } else { self.net.params().bind_frozen(&tape) };
        let out = self.net.forward(&p, tape.constant(raw.clone()))?;
        let gt = tape.constant(clean.clone());
        let mut loss = total_loss(&out, gt, &self.perceptual)?;
        if phase == 2 {
            loss = loss.add(wavelet_loss(out.full, gt)?.scale(self.cfg.wavelet_weight as f32))?;
        }
        let value = loss.value().item() as f64;
        let pred = out.full.value();
        if !tracked || !value.is_finite() {
            return Ok((value, None, pred));
        }
        Ok((value, Some(p.grads(&tape.backward(loss)?)), pred))
    }

    /// Trains one epoch and evaluates on `val`; returns the new record.
    pub fn run_epoch(&mut self, train: &[MoireSample], val: &[MoireSample]) -> Result<EpochRecord> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Data("training needs non-empty train and val splits".into()));
        }
        let epoch = self.epochs_done();
        let phase = if epoch < self.cfg.phase1_epochs { 1 } else { 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let lr = self.sched.lr;
        let mut total = 0.0;
        let mut batches = 0;
        for (step, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let raw = stack(&chunk.iter().map(|&i| &train[i].raw).collect::<Vec<_>>())?;
            let clean = stack(&chunk.iter().map(|&i| &train[i].clean).collect::<Vec<_>>())?;
            let (loss, grads, _) = self.batch_loss(&raw, &clean, phase, true)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            self.opt.update(self.net.params_mut(), &grads.expect("tracked"), lr)?;
            total += loss;
            batches += 1;
        }
        let (mut val_loss, mut vp, mut vs) = (0.0, 0.0, 0.0);
        for s in val {
            let raw = stack(&[&s.raw])?;
            let clean = stack(&[&s.clean])?;
            let (loss, _, pred) = self.batch_loss(&raw, &clean, phase, false)?;
            val_loss += loss;
            let pred = clip01(&pred);
            vp += psnr(&pred, &clean)?;
            vs += ssim(&pred, &clean)?;
        }
        let n = val.len() as f64;
        let record = EpochRecord {
            epoch,
            phase,
            lr,
            train_loss: total / batches as f64,
            val_loss: val_loss / n,
            val_psnr: Some(vp / n),
            val_ssim: Some(vs / n),
        };
        self.sched.step(record.val_loss);
        self.history.push(record.clone());
        Ok(record)
    }
}

fn perceptual(kind: PerceptualKind) -> Perceptual {
    match kind {
        PerceptualKind::Surrogate => Perceptual::surrogate(),
        PerceptualKind::Identity => Perceptual::Identity,
    }
}
