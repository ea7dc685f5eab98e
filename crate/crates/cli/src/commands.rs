use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use demoire::attention::{bench_scaling, BenchConfig, ScalingReport, Variant};
use demoire::flow::{FlowConfig, VelocityConfig, VelocityNet};
use demoire::net::Ablation;
use demoire::pipeline::{self, RawInput, RunConfig, Workdir};
use demoire::synth::Split;
use log::{info, warn};

use crate::{BenchArgs, Cli, Command, ConfigCommand, EvalArgs, FlowArgs, Failure, Preset, RefineArgs, SweepArgs, SynthArgs, Target, TrainArgs};

type Outcome = Result<(), Failure>;

struct Ctx {
    wd: Workdir,
    cfg: RunConfig,
}

impl Ctx {
    /// Resolves `path` against the workdir.
    fn path(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.wd.root.join(path)
        }
    }
}

pub fn run(cli: Cli) -> Outcome {
    let g = cli.global;
    let wd = Workdir::new(&g.workdir, g.data.clone());
    if let Command::Config(ConfigCommand::Init { preset, out, force }) = cli.command {
        return config_init(&wd, preset, out, force, g.seed);
    }
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(&wd.root.join(p))?,
        None => wd.load_config()?,
    };
    if let Some(seed) = g.seed {
        cfg = cfg.with_seed(seed);
    }
    let ctx = Ctx { wd, cfg };
    match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Refine(a) => refine(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Bench(a) => bench(a, g.seed.unwrap_or(0)),
        Command::Config(_) => unreachable!("handled above"),
    }
}

fn config_init(wd: &Workdir, preset: Preset, out: Option<PathBuf>, force: bool, seed: Option<u64>) -> Outcome {
    let path = out.map(|p| if p.is_absolute() { p } else { wd.root.join(p) }).unwrap_or_else(|| wd.config());
    if path.exists() && !force {
        return Err(Failure::Usage(format!("{} exists; pass --force to overwrite", path.display())));
    }
    let mut cfg = match preset {
        Preset::Desk => RunConfig::default(),
        Preset::PaperScale => RunConfig::paper_scale(),
        Preset::Smoke => RunConfig::smoke(),
    };
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    cfg.save(&path)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Outcome {
    let mut d = ctx.cfg.dataset.clone();
    d.train = a.train.unwrap_or(d.train);
    d.val = a.val.unwrap_or(d.val);
    d.test = a.test.unwrap_or(d.test);
    d.size = a.size.unwrap_or(d.size);
    let manifest = pipeline::synth(&ctx.wd, &d)?;
    info!("wrote {} samples of {}x{} to {}", manifest.samples.len(), d.size, d.size, ctx.wd.data.display());
    Ok(())
}

fn train(ctx: &Ctx, a: TrainArgs) -> Outcome {
    match a.target {
        Target::Network => {
            let mut cfg = ctx.cfg.network.clone();
            if let Some(name) = &a.ablation {
                let ab: Ablation = name.parse().map_err(Failure::Usage)?;
                cfg.network = ab.apply(&cfg.network);
            }
            let t = pipeline::train_network(&ctx.wd, &cfg, a.resume, a.max_epochs, &mut |r| {
                info!(
                    "epoch {} phase {} lr {:.3e} train {:.5} val {:.5} psnr {:.3} ssim {:.4}",
                    r.epoch,
                    r.phase,
                    r.lr,
                    r.train_loss,
                    r.val_loss,
                    r.val_psnr.unwrap_or(f64::NAN),
                    r.val_ssim.unwrap_or(f64::NAN)
                )
            })?;
            info!("{} epochs done; checkpoints in {}", t.epochs_done(), ctx.wd.network_dir().display());
        }
        Target::Velocity => {
            if a.ablation.is_some() {
                return Err(Failure::Usage("--ablation applies to the network target only".into()));
            }
            let t = pipeline::train_velocity(&ctx.wd, &ctx.cfg.velocity, a.resume, a.max_epochs, &mut |r| {
                info!("epoch {} train {:.5} val {:.5}", r.epoch, r.train_loss, r.val_loss)
            })?;
            info!("{} epochs done; checkpoints in {}", t.history.len(), ctx.wd.velocity_dir().display());
        }
    }
    Ok(())
}

fn flow_config(base: &FlowConfig, a: &FlowArgs) -> Result<FlowConfig, Failure> {
    let cfg = FlowConfig {
        t0: a.t0.unwrap_or(base.t0),
        dt: a.dt.unwrap_or(base.dt),
        n_iters: a.iters.unwrap_or(base.n_iters),
        samples: a.samples.unwrap_or(base.samples),
        seed: base.seed,
    };
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn split(name: &str) -> Result<Split, Failure> {
    name.parse().map_err(Failure::Usage)
}

fn network_path(ctx: &Ctx, given: &Option<PathBuf>) -> PathBuf {
    given
        .as_ref()
        .map(|p| ctx.path(p))
        .unwrap_or_else(|| ctx.wd.network_dir().join("best.ckpt"))
}

fn velocity_path(ctx: &Ctx, given: &Option<PathBuf>) -> Option<PathBuf> {
    match given {
        Some(p) => Some(ctx.path(p)),
        None => Some(ctx.wd.velocity_dir().join("best.ckpt")).filter(|p| p.exists()),
    }
}

fn refine(ctx: &Ctx, a: RefineArgs) -> Outcome {
    let flow = flow_config(&ctx.cfg.refine, &a.flow)?;
    let sp = split(&a.split)?;
    let inputs = match &a.input {
        Some(dir) => pipeline::load_raw_dir(&ctx.path(dir))?,
        None => RawInput::from_samples(&ctx.wd.load_split(sp)?),
    };
    let net_path = network_path(ctx, &a.checkpoint);
    let net = pipeline::load_network(&net_path).with_context(|| format!("loading {}", net_path.display()))?;
    let vf = if a.no_flow {
        None
    } else {
        match velocity_path(ctx, &a.velocity) {
            Some(p) => Some(pipeline::load_velocity(&p).with_context(|| format!("loading {}", p.display()))?),
            None => {
                warn!("no velocity checkpoint found; writing network outputs without flow refinement");
                None
            }
        }
    };
    let preds = pipeline::refine(&net, vf.as_ref(), &flow, &inputs)?;
    let out = a.output.as_ref().map(|p| ctx.path(p)).unwrap_or_else(|| ctx.wd.refined_dir(sp));
    pipeline::write_predictions(&out, &inputs, &preds)?;
    info!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Outcome {
    let pred = a.pred.as_ref().map(|p| ctx.path(p)).unwrap_or_else(|| ctx.wd.refined_dir(Split::Test));
    let gt = a.gt.as_ref().map(|p| ctx.path(p)).unwrap_or_else(|| ctx.wd.data.join(Split::Test.dir()));
    let report = pipeline::evaluate_dirs(&pred, &gt)?;
    let out = a.out.as_ref().map(|p| ctx.path(p)).unwrap_or_else(|| ctx.wd.reports_dir());
    pipeline::write_report(&out, "eval", &report)?;
    println!(
        "samples {} mean_psnr {:.4} mean_ssim {:.4}",
        report.samples.len(),
        report.mean_psnr,
        report.mean_ssim
    );
    Ok(())
}

fn sweep(ctx: &Ctx, a: SweepArgs) -> Outcome {
    let flow = flow_config(&ctx.cfg.sweep, &a.flow)?;
    let samples = ctx.wd.load_split(split(&a.split)?)?;
    let net = pipeline::load_network(&network_path(ctx, &a.checkpoint))?;
    let vf = if a.zero_velocity {
        VelocityNet::new(VelocityConfig::default()).map_err(demoire::Error::from)?
    } else {
        let p = velocity_path(ctx, &a.velocity)
            .ok_or_else(|| Failure::Usage("no velocity checkpoint; train one or pass --zero-velocity".into()))?;
        pipeline::load_velocity(&p)?
    };
    let trace = pipeline::sweep(&net, &vf, &flow, &samples)?;
    let out = a.out.as_ref().map(|p| ctx.path(p)).unwrap_or_else(|| ctx.wd.reports_dir().join("sweep.csv"));
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    let file = fs::File::create(&out).with_context(|| out.display().to_string())?;
    trace.write_csv(file).with_context(|| out.display().to_string())?;
    let best = trace.argmax_psnr().unwrap_or(0);
    println!(
        "iterations {} peak_iteration {} psnr_start {:.4} psnr_peak {:.4}",
        flow.n_iters,
        best,
        trace.rows[0].psnr.unwrap_or(f64::NAN),
        trace.rows[best].psnr.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn bench(a: BenchArgs, seed: u64) -> Outcome {
    let variants = a
        .variants
        .iter()
        .map(|v| v.parse::<Variant>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::Usage)?;
    if a.lengths.is_empty() || a.lengths.windows(2).any(|w| w[0] >= w[1]) || a.lengths.contains(&0) {
        return Err(Failure::Usage(format!("--lengths must be positive and ascending, got {:?}", a.lengths)));
    }
    let cfg = BenchConfig {
        model_dim: a.model_dim,
        key_dim: a.key_dim,
        seed,
    };
    let mut report = ScalingReport::default();
    for v in variants {
        report.rows.extend(bench_scaling(v, &a.lengths, &cfg).map_err(demoire::Error::from)?.rows);
    }
    match &a.out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| path.display().to_string())?;
            report.write_csv(file).with_context(|| path.display().to_string())?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            report.write_csv(&mut stdout).context("stdout")?;
            stdout.flush().context("stdout")?;
        }
    }
    Ok(())
}
