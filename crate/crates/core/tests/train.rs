mod common;

use std::collections::BTreeMap;

use common::oracles::{plateau_oracle, ssim_oracle};

use demoire::net::{NetworkConfig, ParamStore};
use demoire::synth::make_sample;
use demoire::train::*;
use demoire::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert("w", Tensor::from_slice64(&[1], &[v]).unwrap());
    s
}

fn grad(v: f64) -> BTreeMap<String, Tensor<f64>> {
    BTreeMap::from([("w".to_string(), Tensor::from_slice64(&[1], &[v]).unwrap())])
}

#[test]
fn adamw_matches_hand_computed_two_steps() {
    let cfg = AdamWConfig {
        betas: (0.9, 0.999),
        eps: 1e-8,
        weight_decay: 0.01,
    };
    let lr = 0.1;
    let mut opt = AdamW::<f64>::new(cfg);
    let mut p = scalar_store(1.0);
    opt.update(&mut p, &grad(0.5), lr).unwrap();
    // m = 0.05, v = 0.00025, m̂ = 0.5, v̂ = 0.25.
    let want1 = 1.0 * (1.0 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8);
    let got1 = p.get("w").unwrap().data()[0];
    assert!((got1 - want1).abs() < 1e-7, "{got1} vs {want1}");
    opt.update(&mut p, &grad(-0.25), lr).unwrap();
    let m2: f64 = 0.9 * 0.05 + 0.1 * -0.25;
    let v2: f64 = 0.999 * 0.00025 + 0.001 * 0.0625;
    let (mh, vh) = (m2 / (1.0 - 0.81), v2 / (1.0 - 0.998001));
    let want2 = want1 * (1.0 - 0.001) - 0.1 * mh / (vh.sqrt() + 1e-8);
    let got2 = p.get("w").unwrap().data()[0];
    assert!((got2 - want2).abs() < 1e-7, "{got2} vs {want2}");

    let mut opt32 = AdamW::<f32>::new(cfg);
    let mut p32 = scalar_store(1.0).cast::<f32>();
    let g32 = BTreeMap::from([("w".to_string(), Tensor::from_slice(&[1], &[0.5]).unwrap())]);
    opt32.update(&mut p32, &g32, lr).unwrap();
    assert!((p32.get("w").unwrap().data()[0] as f64 - want1).abs() < 1e-7);
}

#[test]
fn zero_gradient_is_pure_decay() {
    let cfg = AdamWConfig {
        weight_decay: 0.1,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::<f64>::new(cfg);
    let mut p = scalar_store(2.0);
    opt.update(&mut p, &grad(0.0), 0.01).unwrap();
    assert_eq!(p.get("w").unwrap().data()[0], 2.0 * (1.0 - 0.01 * 0.1));
}

#[test]
fn adamw_is_deterministic_and_checks_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f32>::new();
    store.insert("a", Tensor::randn(vec![3, 4], 1.0, &mut rng));
    let grads = BTreeMap::from([("a".to_string(), Tensor::<f32>::randn(vec![3, 4], 1.0, &mut rng))]);
    let run = || {
        let mut s = store.clone();
        let mut opt = AdamW::new(AdamWConfig::default());
        for _ in 0..5 {
            opt.update(&mut s, &grads, 1e-3).unwrap();
        }
        s
    };
    assert_eq!(run(), run());
    let bad = BTreeMap::from([("a".to_string(), Tensor::<f32>::zeros(vec![4, 3]))]);
    let mut s = store.clone();
    assert!(AdamW::new(AdamWConfig::default()).update(&mut s, &bad, 1e-3).is_err());
    assert_eq!(s, store, "rejected update must not touch parameters");
}

fn sched() -> PlateauScheduler {
    PlateauScheduler::new(3e-4, PlateauConfig::default())
}

#[test]
fn plateau_keeps_lr_while_improving() {
    let mut s = sched();
    for l in [1.0, 0.9, 0.8] {
        assert_eq!(s.step(l), 3e-4);
    }
}

#[test]
fn plateau_reduces_after_three_flat_epochs() {
    let mut s = sched();
    let lrs: Vec<f64> = [1.0, 1.0, 1.0, 1.0].iter().map(|&l| s.step(l)).collect();
    assert_eq!(&lrs[..3], &[3e-4; 3]);
    assert!((lrs[3] - 2.4e-4).abs() < 1e-18, "{}", lrs[3]);
}

#[test]
fn plateau_clamps_at_min_lr_exactly() {
    let mut s = sched();
    for _ in 0..500 {
        s.step(1.0);
    }
    assert_eq!(s.lr, 5e-6);
}

#[test]
fn plateau_matches_table_oracle_on_random_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for case in 0..50 {
        let len = rng.random_range(1..120);
        let mut l = 1.0;
        let losses: Vec<f64> = (0..len)
            .map(|_| {
                match rng.random_range(0..3) {
                    0 => l -= rng.random_range(0.0..0.05),
                    1 => l += rng.random_range(0.0..0.05),
                    _ => {}
                }
                l
            })
            .collect();
        let mut s = PlateauScheduler::new(1e-3, PlateauConfig::default());
        let got: Vec<f64> = losses.iter().map(|&x| s.step(x)).collect();
        assert_eq!(got, plateau_oracle(&losses, 1e-3), "case {case}");
    }
}

#[test]
fn psnr_closed_forms() {
    let a = Tensor::<f32>::full(vec![3, 8, 8], 0.5);
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    let b = a.map(|v| v + 1.0 / 255.0);
    assert!((psnr(&a, &b).unwrap() - 48.131).abs() < 1e-3);
    let c = a.map(|v| v - 0.1);
    assert!((psnr(&a, &c).unwrap() - 20.0).abs() < 1e-3);
    assert!(psnr(&a, &Tensor::zeros(vec![3, 8, 4])).is_err());
}

fn fixture(seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Tensor::<f32>::uniform(vec![2, 16, 16], 0.0, 1.0, &mut rng);
    let noise = Tensor::<f32>::randn(vec![2, 16, 16], 0.1, &mut rng);
    let b = a.add(&noise).unwrap().map(|v| v.clamp(0.0, 1.0));
    (a, b)
}

#[test]
fn ssim_matches_direct_formula_oracle() {
    for seed in 0..3 {
        let (a, b) = fixture(seed);
        let got = ssim(&a, &b).unwrap();
        let want = ssim_oracle(&a, &b);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn ssim_identity_inversion_and_size() {
    let (a, _) = fixture(9);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let bin = a.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let inv = bin.map(|v| 1.0 - v);
    assert!(ssim(&bin, &inv).unwrap() < 0.0);
    let small = Tensor::<f32>::zeros(vec![1, 10, 16]);
    assert!(ssim(&small, &small).is_err());
}

#[test]
fn report_means_match_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows: Vec<SampleMetrics> = (0..17)
        .map(|i| SampleMetrics {
            id: format!("{i}"),
            psnr: rng.random_range(10.0..40.0),
            ssim: rng.random_range(0.0..1.0),
        })
        .collect();
    let r = MetricsReport::from_rows(rows.clone(), 1.0);
    let mp: f64 = rows.iter().map(|r| r.psnr).sum::<f64>() / 17.0;
    let ms: f64 = rows.iter().map(|r| r.ssim).sum::<f64>() / 17.0;
    assert!((r.mean_psnr - mp).abs() < 1e-9 && (r.mean_ssim - ms).abs() < 1e-9);
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("id,psnr,ssim\n"));
    assert_eq!(text.lines().count(), 18);
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        network: NetworkConfig {
            image_size: 32,
            channels: 8,
            inn_hidden: 8,
            ttt_model_dim: 8,
            ttt_key_dim: 8,
            ..NetworkConfig::default()
        },
        phase1_epochs: 1,
        phase2_epochs: 1,
        batch_size: 4,
        lr: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn tiny_data() -> (Vec<demoire::synth::MoireSample>, Vec<demoire::synth::MoireSample>) {
    let s: Vec<_> = (0..10).map(|i| make_sample(5, i, 32).unwrap()).collect();
    (s[..8].to_vec(), s[8..].to_vec())
}

#[test]
fn two_epoch_smoke_run_writes_loadable_checkpoint() {
    let (train, val) = tiny_data();
    let mut t = Trainer::new(tiny_config()).unwrap();
    let r0 = t.run_epoch(&train, &val).unwrap();
    let r1 = t.run_epoch(&train, &val).unwrap();
    assert_eq!((r0.phase, r1.phase), (1, 2));
    assert!(t.finished());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    t.checkpoint().unwrap().save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let back = Trainer::from_checkpoint(&loaded).unwrap();
    assert_eq!(back.net.params(), t.net.params());
    assert_eq!(back.history, t.history);
    let a = back.net.predict(&Tensor::full(vec![1, 4, 16, 16], 0.3)).unwrap().full;
    let b = t.net.predict(&Tensor::full(vec![1, 4, 16, 16], 0.3)).unwrap().full;
    assert_eq!(a, b);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let (train, val) = tiny_data();
    let mut t = Trainer::new(tiny_config()).unwrap();
    t.run_epoch(&train, &val).unwrap();
    let bytes = t.checkpoint().unwrap().to_bytes().unwrap();
    let again = Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap();
    assert_eq!(bytes, again);
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), t.checkpoint().unwrap());
}

#[test]
fn corrupt_checkpoints_rejected() {
    let t = Trainer::new(tiny_config()).unwrap();
    let bytes = t.checkpoint().unwrap().to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..4]).is_err());
    let text = String::from_utf8_lossy(&bytes[8..40]).to_string();
    assert!(text.contains("\"version\":1"), "{text}");
    let mut bumped = bytes.clone();
    let pos = bumped.windows(11).position(|w| w == b"\"version\":1").unwrap();
    bumped[pos + 10] = b'7';
    assert!(Checkpoint::from_bytes(&bumped).is_err());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (train, val) = tiny_data();
    let mut straight = Trainer::new(tiny_config()).unwrap();
    straight.run_epoch(&train, &val).unwrap();
    straight.run_epoch(&train, &val).unwrap();

    let mut first = Trainer::new(tiny_config()).unwrap();
    first.run_epoch(&train, &val).unwrap();
    let bytes = first.checkpoint().unwrap().to_bytes().unwrap();
    let mut resumed = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    resumed.run_epoch(&train, &val).unwrap();

    assert_eq!(resumed.net.params(), straight.net.params());
    assert_eq!(resumed.opt, straight.opt);
    assert_eq!(resumed.sched, straight.sched);
    assert_eq!(resumed.history, straight.history);
}

#[test]
fn non_finite_loss_aborts_with_context() {
    let (train, val) = tiny_data();
    let mut t = Trainer::new(tiny_config()).unwrap();
    let w = t.net.params_mut().get_mut("rec.0.head.bias").unwrap();
    w.data_mut()[0] = f32::NAN;
    match t.run_epoch(&train, &val) {
        Err(Error::NonFiniteLoss { epoch, step }) => assert_eq!((epoch, step), (0, 0)),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn config_validation_and_presets() {
    assert!(TrainConfig::default().validate().is_ok());
    let paper = TrainConfig::paper_scale();
    assert_eq!((paper.phase1_epochs, paper.phase2_epochs), (175, 41));
    let bad = TrainConfig {
        lr: 1e-6,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    let mut bad = TrainConfig::default();
    bad.plateau.factor = 1.0;
    assert!(bad.validate().is_err());
    let json = serde_json::to_string(&TrainConfig::default()).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), TrainConfig::default());
    assert!(serde_json::from_str::<TrainConfig>("{\"bogus\": 1}").is_err());
}
