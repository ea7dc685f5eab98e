//! Workdir layout and the end-to-end steps shared by the command line and
//! the acceptance tests.
//!
//! ```text
//! <workdir>/config.json
//! <workdir>/data/                     dataset (override: --data or DEMOIRE_DATA_ROOT)
//! <workdir>/runs/network/{model,best}.ckpt, log.csv
//! <workdir>/runs/velocity/{velocity,best}.ckpt, log.csv
//! <workdir>/refined/<split>/<id>_pred.png
//! <workdir>/reports/…
//! ```
//!
//! Every artifact is a pure function of the config and seed except files
//! named `timing.json`, which hold wall-clock measurements.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};
use crate::flow::{tfmp_refine, FlowConfig, RefineTrace, VelocityNet, VelocityTrainConfig, VelocityTrainer};
use crate::net::DemoireNet;
use crate::synth::{build_dataset, load_split, read_png, read_raw_png, write_png, DatasetManifest, MoireSample, Split};
use crate::tensor::Tensor;
use crate::train::{evaluate_pair, stack, Checkpoint, EpochRecord, MetricsReport, TrainConfig, Trainer};

pub const DATA_ROOT_ENV: &str = "DEMOIRE_DATA_ROOT";
pub const CONFIG_FILE: &str = "config.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train: 512,
            val: 64,
            test: 64,
            size: 64,
            seed: 0,
        }
    }
}

/// Everything a run needs, as written by `config init`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub network: TrainConfig,
    pub velocity: VelocityTrainConfig,
    pub refine: FlowConfig,
    /// Extended schedule for iteration sweeps.
    pub sweep: FlowConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            network: TrainConfig::default(),
            velocity: VelocityTrainConfig::default(),
            refine: FlowConfig::default(),
            sweep: FlowConfig {
                dt: 0.001,
                n_iters: 50,
                ..FlowConfig::default()
            },
        }
    }
}

impl RunConfig {
    pub fn paper_scale() -> Self {
        Self {
            network: TrainConfig::paper_scale(),
            ..Self::default()
        }
    }

    /// Seconds-scale settings for liveness checks.
    pub fn smoke() -> Self {
        let mut cfg = Self::default();
        cfg.dataset = DatasetConfig {
            train: 8,
            val: 2,
            test: 2,
            size: 32,
            seed: 0,
        };
        let net = &mut cfg.network.network;
        net.image_size = 32;
        net.channels = 8;
        net.inn_hidden = 8;
        net.ttt_model_dim = 8;
        net.ttt_key_dim = 8;
        cfg.network.phase1_epochs = 1;
        cfg.network.phase2_epochs = 1;
        cfg.network.batch_size = 4;
        cfg.velocity.epochs = 1;
        cfg.velocity.batch_size = 4;
        cfg.velocity.crop = 16;
        cfg.velocity.velocity.arch = crate::flow::VelocityArch::Conv {
            channels: 3,
            width: 8,
            layers: 4,
        };
        cfg
    }

    /// Sets every seed from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.network.seed = seed;
        self.velocity.seed = seed;
        self.velocity.velocity.seed = seed;
        self.refine.seed = seed;
        self.sweep.seed = seed;
        self
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.network.validate()?;
        self.velocity.validate()?;
        self.refine.validate()?;
        self.sweep.validate()?;
        if self.dataset.size != self.network.network.image_size {
            return Err(format!(
                "dataset size {} differs from network image_size {}",
                self.dataset.size, self.network.network.image_size
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = serde_json::from_str(&text).map_err(json_err(path))?;
        cfg.validate().map_err(Error::Config)?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Paths of one experiment directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workdir {
    pub root: PathBuf,
    pub data: PathBuf,
}

impl Workdir {
    /// The data root is `data` if given, else `$DEMOIRE_DATA_ROOT`, else
    /// `<root>/data`; relative data roots resolve against `root`.
    pub fn new(root: impl Into<PathBuf>, data: Option<PathBuf>) -> Self {
        let root = root.into();
        let data = data
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .map(|d| if d.is_absolute() { d } else { root.join(d) })
            .unwrap_or_else(|| root.join("data"));
        Self { root, data }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn network_dir(&self) -> PathBuf {
        self.root.join("runs/network")
    }

    pub fn velocity_dir(&self) -> PathBuf {
        self.root.join("runs/velocity")
    }

    pub fn refined_dir(&self, split: Split) -> PathBuf {
        self.root.join("refined").join(split.dir())
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// The run config at `config.json`, or the defaults when absent.
    pub fn load_config(&self) -> Result<RunConfig> {
        let path = self.config();
        if path.exists() {
            RunConfig::load(&path)
        } else {
            Ok(RunConfig::default())
        }
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<MoireSample>> {
        let manifest = DatasetManifest::load(&self.data)?;
        load_split(&self.data, &manifest, split)
    }
}

pub fn synth(wd: &Workdir, cfg: &DatasetConfig) -> Result<DatasetManifest> {
    build_dataset(&wd.data, [cfg.train, cfg.val, cfg.test], cfg.size, cfg.seed)
}

fn write_log(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    for r in history {
        w.serialize(r).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(io_err(path))
}

fn is_best(history: &[EpochRecord]) -> bool {
    let (last, rest) = history.split_last().expect("non-empty");
    rest.iter().all(|r| last.val_loss < r.val_loss)
}

/// Trains the restoration network until its schedule is complete or
/// `max_epochs` more epochs have run. Saves `model.ckpt` and `log.csv`
/// after every epoch and `best.ckpt` on each new lowest validation loss.
/// With `resume`, continues from an existing `model.ckpt` (whose stored
/// config wins).
pub fn train_network(
    wd: &Workdir,
    cfg: &TrainConfig,
    resume: bool,
    max_epochs: Option<usize>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Trainer> {
    let dir = wd.network_dir();
    let last = dir.join("model.ckpt");
    let mut trainer = if resume && last.exists() {
        Trainer::from_checkpoint(&Checkpoint::load(&last)?)?
    } else {
        Trainer::new(cfg.clone())?
    };
    let train = wd.load_split(Split::Train)?;
    let val = wd.load_split(Split::Val)?;
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut ran = 0;
    while !trainer.finished() && max_epochs.is_none_or(|m| ran < m) {
        let record = trainer.run_epoch(&train, &val)?;
        let ckpt = trainer.checkpoint()?;
        ckpt.save(&last)?;
        if is_best(&trainer.history) {
            ckpt.save(&dir.join("best.ckpt"))?;
        }
        write_log(&dir.join("log.csv"), &trainer.history)?;
        on_epoch(&record);
        ran += 1;
    }
    Ok(trainer)
}

/// Flow-matching training on the clean training images; same file
/// conventions as [`train_network`].
pub fn train_velocity(
    wd: &Workdir,
    cfg: &VelocityTrainConfig,
    resume: bool,
    max_epochs: Option<usize>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<VelocityTrainer> {
    let dir = wd.velocity_dir();
    let last = dir.join("velocity.ckpt");
    let mut trainer = if resume && last.exists() {
        VelocityTrainer::from_checkpoint(&Checkpoint::load(&last)?)?
    } else {
        VelocityTrainer::new(cfg.clone())?
    };
    let train: Vec<Tensor<f32>> = wd.load_split(Split::Train)?.into_iter().map(|s| s.clean).collect();
    let val: Vec<Tensor<f32>> = wd.load_split(Split::Val)?.into_iter().map(|s| s.clean).collect();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut ran = 0;
    while !trainer.finished() && max_epochs.is_none_or(|m| ran < m) {
        let record = trainer.run_epoch(&train, &val)?;
        let ckpt = trainer.checkpoint()?;
        ckpt.save(&last)?;
        if is_best(&trainer.history) {
            ckpt.save(&dir.join("best.ckpt"))?;
        }
        write_log(&dir.join("log.csv"), &trainer.history)?;
        on_epoch(&record);
        ran += 1;
    }
    Ok(trainer)
}

pub fn load_network(path: &Path) -> Result<DemoireNet> {
    Ok(Trainer::from_checkpoint(&Checkpoint::load(path)?)?.net)
}

pub fn load_velocity(path: &Path) -> Result<VelocityNet> {
    Ok(VelocityTrainer::from_checkpoint(&Checkpoint::load(path)?)?.net)
}

/// One network input: an id and its `[4, h, w]` mosaic.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInput {
    pub id: String,
    pub raw: Tensor<f32>,
}

impl RawInput {
    pub fn from_samples(samples: &[MoireSample]) -> Vec<Self> {
        samples
            .iter()
            .map(|s| RawInput {
                id: format!("{:05}", s.id),
                raw: s.raw.clone(),
            })
            .collect()
    }
}

/// Every `<id>_raw.png` in `dir`, sorted by id.
pub fn load_raw_dir(dir: &Path) -> Result<Vec<RawInput>> {
    let mut out = Vec::new();
    for (id, path) in pngs_with_suffix(dir, "_raw")? {
        out.push(RawInput {
            id,
            raw: read_raw_png(&path)?,
        });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no *_raw.png inputs", dir.display())));
    }
    Ok(out)
}

fn clip01(x: &Tensor<f32>) -> Tensor<f32> {
    x.map(|v| v.clamp(0.0, 1.0))
}

/// Clipped `[3, H, W]` network output for every input.
pub fn restore(net: &DemoireNet, inputs: &[RawInput]) -> Result<Vec<Tensor<f32>>> {
    inputs
        .iter()
        .map(|r| {
            let full = net.predict(&stack(&[&r.raw])?)?.full;
            let s = full.shape()[1..].to_vec();
            Ok(clip01(&full).reshape(s)?)
        })
        .collect()
}

/// Network output followed, when a velocity field is given, by truncated
/// flow refinement. Sample `i` uses noise seed `flow.seed + i`. Outputs are
/// clipped to `[0, 1]`.
pub fn refine(net: &DemoireNet, vf: Option<&VelocityNet>, flow: &FlowConfig, inputs: &[RawInput]) -> Result<Vec<Tensor<f32>>> {
    let restored = restore(net, inputs)?;
    let Some(vf) = vf else { return Ok(restored) };
    restored
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let cfg = FlowConfig {
                seed: flow.seed.wrapping_add(i as u64),
                ..*flow
            };
            let (y, _) = tfmp_refine(&stack(&[x])?, vf, &cfg, None)?;
            Ok(clip01(&y).reshape(x.shape().to_vec())?)
        })
        .collect()
}

/// Writes `<id>_pred.png` for every prediction.
pub fn write_predictions(dir: &Path, inputs: &[RawInput], preds: &[Tensor<f32>]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (r, p) in inputs.iter().zip(preds) {
        write_png(&dir.join(format!("{}_pred.png", r.id)), p)?;
    }
    Ok(())
}

/// `(key, path)` for PNGs whose stem ends in `suffix`, key = stem without
/// it, sorted by key.
fn pngs_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if let Some(key) = stem.strip_suffix(suffix) {
            out.push((key.to_string(), path.clone()));
        }
    }
    out.sort();
    Ok(out)
}

/// Picks the first suffix with at least one match, else the empty suffix.
/// Files with the first suffix in `preferred` that matches anything, else
/// every png.
fn pick(dir: &Path, preferred: &[&str]) -> Result<Vec<(String, PathBuf)>> {
    for suffix in preferred {
        let hits = pngs_with_suffix(dir, suffix)?;
        if !hits.is_empty() {
            return Ok(hits);
        }
    }
    pngs_with_suffix(dir, "")
}

/// PSNR/SSIM of predictions in `pred_dir` against targets in `gt_dir`.
/// Files pair by key. Predictions are `<key>_pred.png`, else
/// `<key>_clean.png`, else any `<key>.png`; targets are `<key>_clean.png`,
/// else any `<key>.png`.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<MetricsReport> {
    let start = std::time::Instant::now();
    let preds = pick(pred_dir, &["_pred", "_clean"])?;
    let gts = pick(gt_dir, &["_clean"])?;
    let mut rows = Vec::new();
    for (key, path) in &preds {
        let Some((_, gt)) = gts.iter().find(|(k, _)| k == key) else {
            return Err(Error::Data(format!("no target for prediction {}", path.display())));
        };
        rows.push(evaluate_pair(key.clone(), &read_png(path)?, &read_png(gt)?)?);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no predictions", pred_dir.display())));
    }
    Ok(MetricsReport::from_rows(rows, start.elapsed().as_secs_f64() * 1e3))
}

/// Writes `<stem>.csv` (per sample) and `<stem>.json` (means) under `dir`,
/// and the runtime into `timing.json`.
pub fn write_report(dir: &Path, stem: &str, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    report.write_csv(file).map_err(|source| Error::Csv { path: csv_path, source })?;
    #[derive(Serialize)]
    struct Means {
        samples: usize,
        mean_psnr: f64,
        mean_ssim: f64,
    }
    write_json(
        &dir.join(format!("{stem}.json")),
        &Means {
            samples: report.samples.len(),
            mean_psnr: report.mean_psnr,
            mean_ssim: report.mean_ssim,
        },
    )?;
    write_json(&dir.join(TIMING_FILE), &serde_json::json!({ stem: { "runtime_ms": report.runtime_ms } }))
}

/// Refinement trace of the whole batch of network outputs against the
/// clean targets.
pub fn sweep(net: &DemoireNet, vf: &VelocityNet, flow: &FlowConfig, samples: &[MoireSample]) -> Result<RefineTrace> {
    let inputs = RawInput::from_samples(samples);
    let restored = restore(net, &inputs)?;
    let x = stack(&restored.iter().collect::<Vec<_>>())?;
    let gt = stack(&samples.iter().map(|s| &s.clean).collect::<Vec<_>>())?;
    Ok(tfmp_refine(&x, vf, flow, Some(&gt))?.1)
}
