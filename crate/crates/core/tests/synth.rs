use std::collections::BTreeMap;
use std::path::Path;

use demoire::synth::{
    apply_moire, build_dataset, load_split, make_sample, mosaic_rggb, synth_clean, synth_pattern, unmosaic_rggb,
    DatasetManifest, DegradationParams, Pattern, Split,
};
use demoire::tensor::{rfft2, Tensor};
use sha2::{Digest, Sha256};

fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.numel() as f64;
    -10.0 * mse.log10()
}

#[test]
fn clean_images_are_clipped_and_deterministic() {
    for seed in 0..8 {
        let a = synth_clean(seed, 64).unwrap();
        assert_eq!(a.shape(), &[3, 64, 64]);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(a, synth_clean(seed, 64).unwrap());
    }
    assert_ne!(synth_clean(1, 64).unwrap(), synth_clean(2, 64).unwrap());
    assert!(synth_clean(0, 48).is_err());
}

#[test]
fn stripes_carry_energy_above_a_tenth_cycle() {
    for seed in 0..5 {
        let img = synth_pattern(Pattern::Stripes, seed, 64).unwrap();
        let spec = rfft2(&img.narrow(0, 0, 1).unwrap()).unwrap();
        let (mut high, mut ac) = (0.0, 0.0);
        for ky in 0..64 {
            for kx in 0..33 {
                let re = spec.at(&[0, ky, kx, 0]) as f64;
                let im = spec.at(&[0, ky, kx, 1]) as f64;
                let fy = (if ky > 32 { 64 - ky } else { ky }) as f64 / 64.0;
                let fx = kx as f64 / 64.0;
                let e = re * re + im * im;
                if ky + kx > 0 {
                    ac += e;
                }
                if (fx * fx + fy * fy).sqrt() > 0.1 {
                    high += e;
                }
            }
        }
        assert!(high > 0.1 * ac, "seed {seed}: {high} of {ac}");
    }
}

#[test]
fn zero_amplitude_and_noise_is_identity() {
    let x = synth_clean(3, 32).unwrap();
    let p = DegradationParams {
        warp: 2.0,
        ..DegradationParams::identity()
    };
    assert_eq!(apply_moire(&x, &p).unwrap(), x);
}

#[test]
fn white_input_reveals_the_field() {
    let p = DegradationParams {
        frequency: [0.13, -0.07],
        phase: 0.4,
        amplitude: 0.3,
        warp: 1.5,
        sigma: 0.0,
        seed: 0,
    };
    let white = Tensor::<f32>::ones(vec![3, 16, 16]);
    let out = apply_moire(&white, &p).unwrap();
    let tau = std::f64::consts::TAU;
    for c in 0..3 {
        for v in 0..16 {
            for u in 0..16 {
                let (uf, vf) = (u as f64, v as f64);
                let uw = uf + 1.5 * (tau * vf / 64.0).sin();
                let vw = vf + 1.5 * (tau * uf / 64.0).sin();
                let m = 1.0 + 0.3 * (tau * (0.13 * uw - 0.07 * vw) + 0.4).cos();
                let want = m.min(1.0) as f32;
                assert!((out.at(&[c, v, u]) - want).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn noise_std_matches_sigma() {
    let x = Tensor::<f32>::full(vec![1, 64, 64], 0.5);
    for (sigma, seed) in [(0.02, 1), (0.05, 2), (0.1, 3)] {
        let p = DegradationParams {
            sigma,
            seed,
            ..DegradationParams::identity()
        };
        let d: Vec<f64> = apply_moire(&x, &p).unwrap().data().iter().map(|&v| v as f64 - 0.5).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((std - sigma).abs() < 0.1 * sigma, "std {std} for sigma {sigma}");
    }
}

#[test]
fn degradation_is_deterministic_and_nonlinear() {
    let a = synth_clean(5, 32).unwrap().scale(0.6);
    let b = synth_clean(6, 32).unwrap().scale(0.6);
    let p = DegradationParams {
        frequency: [0.1, 0.05],
        phase: 0.0,
        amplitude: 0.4,
        warp: 1.0,
        sigma: 0.01,
        seed: 9,
    };
    assert_eq!(apply_moire(&a, &p).unwrap(), apply_moire(&a, &p).unwrap());
    let joint = apply_moire(&a.add(&b).unwrap(), &p).unwrap();
    let sum = apply_moire(&a, &p).unwrap().add(&apply_moire(&b, &p).unwrap()).unwrap();
    assert!(joint.max_abs_diff(&sum) > 1e-2);
}

#[test]
fn invalid_params_rejected() {
    let x = Tensor::<f32>::zeros(vec![3, 8, 8]);
    for p in [
        DegradationParams { frequency: [0.0, 0.1], ..DegradationParams::identity() },
        DegradationParams { frequency: [0.1, 0.6], ..DegradationParams::identity() },
        DegradationParams { sigma: -0.1, ..DegradationParams::identity() },
    ] {
        assert!(apply_moire(&x, &p).is_err());
    }
}

#[test]
fn constant_image_packs_to_rggb_planes() {
    let mut data = Vec::new();
    for v in [0.2f32, 0.5, 0.9] {
        data.extend(std::iter::repeat_n(v, 36));
    }
    let x = Tensor::new(vec![3, 6, 6], data).unwrap();
    let raw = mosaic_rggb(&x).unwrap();
    assert_eq!(raw.shape(), &[4, 3, 3]);
    for (plane, want) in [0.2f32, 0.5, 0.5, 0.9].into_iter().enumerate() {
        assert!(raw.data()[plane * 9..(plane + 1) * 9].iter().all(|&v| v == want));
    }
}

#[test]
fn hand_built_four_by_four_packing() {
    // Channel c, row y, column x holds 100c + 10y + x.
    let mut data = Vec::new();
    for c in 0..3 {
        for y in 0..4 {
            for x in 0..4 {
                data.push((100 * c + 10 * y + x) as f32);
            }
        }
    }
    let raw = mosaic_rggb(&Tensor::new(vec![3, 4, 4], data).unwrap()).unwrap();
    #[rustfmt::skip]
    let want = [
        0.0, 2.0, 20.0, 22.0,        // R: even rows, even cols
        101.0, 103.0, 121.0, 123.0,  // G: even rows, odd cols
        110.0, 112.0, 130.0, 132.0,  // G: odd rows, even cols
        211.0, 213.0, 231.0, 233.0,  // B: odd rows, odd cols
    ];
    assert_eq!(raw.data(), &want);
}

#[test]
fn pack_unpack_bijection_on_bayer_sites() {
    let x = synth_clean(7, 16).unwrap();
    let raw = mosaic_rggb(&x).unwrap();
    let bayer = unmosaic_rggb(&raw).unwrap();
    assert_eq!(mosaic_rggb(&bayer).unwrap(), raw);
    assert_eq!(unmosaic_rggb(&mosaic_rggb(&bayer).unwrap()).unwrap(), bayer);
    assert!(mosaic_rggb(&Tensor::zeros(vec![3, 5, 4])).is_err());
    assert!(mosaic_rggb(&Tensor::zeros(vec![3, 4, 7])).is_err());
}

#[test]
fn samples_depend_only_on_seed_and_id() {
    let a = make_sample(11, 3, 32).unwrap();
    assert_eq!(a, make_sample(11, 3, 32).unwrap());
    assert_ne!(a.clean, make_sample(11, 4, 32).unwrap().clean);
    assert_eq!(a.raw, mosaic_rggb(&a.degraded).unwrap());
}

fn hash_tree(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(std::fs::read(&path).unwrap());
                out.insert(path.strip_prefix(root).unwrap().display().to_string(), hex::encode(digest));
            }
        }
    }
    out
}

#[test]
fn dataset_is_reproducible_and_well_split() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = build_dataset(a.path(), [12, 3, 3], 64, 42).unwrap();
    build_dataset(b.path(), [12, 3, 3], 64, 42).unwrap();
    assert_eq!(hash_tree(a.path()), hash_tree(b.path()));
    assert_eq!(DatasetManifest::load(a.path()).unwrap(), m);

    let ids = |s: Split| m.split(s).map(|e| e.id).collect::<Vec<_>>();
    let (tr, va, te) = (ids(Split::Train), ids(Split::Val), ids(Split::Test));
    assert_eq!((tr.len(), va.len(), te.len()), (12, 3, 3));
    let mut all: Vec<u64> = tr.iter().chain(&va).chain(&te).copied().collect();
    all.sort();
    all.dedup();
    assert_eq!(all, (0..18).collect::<Vec<_>>());

    let train = load_split(a.path(), &m, Split::Train).unwrap();
    assert_eq!(train[0].raw.shape(), &[4, 32, 32]);
    assert!(train[0].raw.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let mean = train.iter().map(|s| psnr(&s.degraded, &s.clean)).sum::<f64>() / train.len() as f64;
    assert!((10.0..=30.0).contains(&mean), "mean input PSNR {mean}");
    println!("mean input PSNR {mean:.2} dB");

    assert!(build_dataset(a.path(), [0, 1, 1], 64, 1).is_err());
}
