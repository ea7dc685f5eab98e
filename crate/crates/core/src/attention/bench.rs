//! Streaming scaling harness: every variant consumes a sequence token by
//! token and the auxiliary state it must keep (KV cache, compressed stacks, or
//! TTT hidden state) is measured at its peak.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::softmax::CompressionMatrices;
use super::ttt::{TttParams, TttState};
use super::Variant;
use crate::tensor::{matmul, Result, Tensor, TensorError};

/// Growing key/value store of autoregressive softmax attention.
#[derive(Debug, Clone, Default)]
pub struct KvCache {
    keys: Vec<f32>,
    values: Vec<f32>,
    key_dim: usize,
    value_dim: usize,
}

impl KvCache {
    pub fn new(key_dim: usize, value_dim: usize) -> Self {
        Self {
            keys: Vec::new(),
            values: Vec::new(),
            key_dim,
            value_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len() / self.key_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn bytes(&self) -> usize {
        (self.keys.len() + self.values.len()) * std::mem::size_of::<f32>()
    }

    pub fn push(&mut self, k: &[f32], v: &[f32]) {
        debug_assert_eq!(k.len(), self.key_dim);
        debug_assert_eq!(v.len(), self.value_dim);
        self.keys.extend_from_slice(k);
        self.values.extend_from_slice(v);
    }

    /// Attends `q` over every cached entry.
    pub fn attend(&self, q: &[f32]) -> Vec<f32> {
        let t = self.len();
        let scale = 1.0 / (self.key_dim as f32).sqrt();
        let mut scores: Vec<f32> = (0..t)
            .map(|j| {
                let k = &self.keys[j * self.key_dim..(j + 1) * self.key_dim];
                k.iter().zip(q).map(|(a, b)| a * b).sum::<f32>() * scale
            })
            .collect();
        let m = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - m).exp();
            z += *s;
        }
        let mut out = vec![0.0; self.value_dim];
        for (j, s) in scores.iter().enumerate() {
            let w = s / z;
            let v = &self.values[j * self.value_dim..(j + 1) * self.value_dim];
            for (o, &x) in out.iter_mut().zip(v) {
                *o += w * x;
            }
        }
        out
    }
}

/// One measured (variant, length) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub variant: Variant,
    pub length: usize,
    pub wall_ms: f64,
    pub state_bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
}

impl ScalingReport {
    /// Columns `variant,length,wall_ms,state_bytes`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(std::io::Error::other)?;
        }
        w.flush()
    }

    pub fn for_variant(&self, variant: Variant) -> impl Iterator<Item = &ScalingRow> {
        self.rows.iter().filter(move |r| r.variant == variant)
    }

    /// Least-squares slope of log(wall_ms) against log(length).
    pub fn log_log_slope(&self, variant: Variant) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .for_variant(variant)
            .filter(|r| r.wall_ms > 0.0)
            .map(|r| ((r.length as f64).ln(), r.wall_ms.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

/// Dimensions and seed for the benchmark sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub model_dim: usize,
    pub key_dim: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            model_dim: 32,
            key_dim: 32,
            seed: 0,
        }
    }
}

fn time<F: FnOnce() -> Result<usize>>(f: F) -> Result<(f64, usize)> {
    let start = Instant::now();
    let bytes = f()?;
    Ok((start.elapsed().as_secs_f64() * 1e3, bytes))
}

fn run_softmax(tokens: &Tensor<f32>, proj: &[Tensor<f32>; 3]) -> Result<usize> {
    let k = matmul(tokens, &proj[0])?;
    let v = matmul(tokens, &proj[1])?;
    let q = matmul(tokens, &proj[2])?;
    let (t, dk) = (k.shape()[0], k.shape()[1]);
    let mut cache = KvCache::new(dk, dk);
    let mut peak = 0;
    let mut sink = 0.0f32;
    for i in 0..t {
        cache.push(&k.data()[i * dk..(i + 1) * dk], &v.data()[i * dk..(i + 1) * dk]);
        peak = peak.max(cache.bytes());
        sink += cache.attend(&q.data()[i * dk..(i + 1) * dk])[0];
    }
    std::hint::black_box(sink);
    Ok(peak)
}

fn run_compressed(tokens: &Tensor<f32>, proj: &[Tensor<f32>; 3], rng: &mut ChaCha8Rng) -> Result<usize> {
    let k = matmul(tokens, &proj[0])?;
    let v = matmul(tokens, &proj[1])?;
    let q = matmul(tokens, &proj[2])?;
    let t = k.shape()[0];
    let scale = 1.0 / (t as f64).sqrt();
    let comp = CompressionMatrices {
        w_k: Tensor::randn(vec![t, t], scale, rng),
        w_v: Tensor::randn(vec![t, t], scale, rng),
    };
    let (kc, vc) = comp.compress(&k, &v)?;
    let z = super::softmax_attention(&q, &kc, &vc, false)?;
    std::hint::black_box(z.data()[0]);
    Ok((kc.numel() + vc.numel()) * std::mem::size_of::<f32>())
}

fn run_ttt(tokens: &Tensor<f32>, params: &TttParams<f32>) -> Result<usize> {
    let (t, d) = (tokens.shape()[0], tokens.shape()[1]);
    let mut state = TttState::new(params.clone())?;
    let mut peak = state.state_bytes();
    let mut sink = 0.0f32;
    for i in 0..t {
        let x = Tensor::new(vec![d], tokens.data()[i * d..(i + 1) * d].to_vec())?;
        sink += state.advance(&x)?.data()[0];
        peak = peak.max(state.state_bytes());
    }
    std::hint::black_box(sink);
    Ok(peak)
}

/// Measures wall time and peak auxiliary-state bytes for each length.
pub fn bench_scaling(variant: Variant, lengths: &[usize], cfg: &BenchConfig) -> Result<ScalingReport> {
    if lengths.windows(2).any(|w| w[0] > w[1]) || lengths.contains(&0) {
        return Err(TensorError::InvalidGeometry {
            op: "bench_scaling",
            detail: format!("lengths must be positive and ascending: {lengths:?}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = 0.4 / (cfg.model_dim as f64).sqrt();
    let proj = [
        Tensor::randn(vec![cfg.model_dim, cfg.key_dim], s, &mut rng),
        Tensor::randn(vec![cfg.model_dim, cfg.key_dim], s, &mut rng),
        Tensor::randn(vec![cfg.model_dim, cfg.key_dim], s, &mut rng),
    ];
    let params = TttParams {
        theta_k: proj[0].clone(),
        theta_v: proj[1].clone(),
        theta_q: proj[2].clone(),
        eta: 0.1,
    };
    let mut rows = Vec::with_capacity(lengths.len());
    for &length in lengths {
        let tokens = Tensor::<f32>::randn(vec![length, cfg.model_dim], 1.0, &mut rng);
        let (wall_ms, state_bytes) = match variant {
            Variant::Softmax => time(|| run_softmax(&tokens, &proj))?,
            Variant::Compressed => time(|| run_compressed(&tokens, &proj, &mut rng))?,
            Variant::Ttt => time(|| run_ttt(&tokens, &params))?,
        };
        rows.push(ScalingRow {
            variant,
            length,
            wall_ms,
            state_bytes,
        });
    }
    Ok(ScalingReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_bytes_follow_cache_growth() {
        let cfg = BenchConfig {
            model_dim: 8,
            key_dim: 8,
            seed: 1,
        };
        let ttt = bench_scaling(Variant::Ttt, &[16, 64], &cfg).unwrap();
        assert_eq!(ttt.rows[0].state_bytes, ttt.rows[1].state_bytes);
        assert_eq!(ttt.rows[0].state_bytes, 8 * 8 * 4);
        let sm = bench_scaling(Variant::Softmax, &[16, 64], &cfg).unwrap();
        assert_eq!(sm.rows[1].state_bytes, 4 * sm.rows[0].state_bytes);
        assert_eq!(sm.rows[0].state_bytes, 16 * 2 * 8 * 4);
    }

    #[test]
    fn csv_columns() {
        let report = ScalingReport {
            rows: vec![ScalingRow {
                variant: Variant::Ttt,
                length: 4,
                wall_ms: 0.5,
                state_bytes: 64,
            }],
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "variant,length,wall_ms,state_bytes\nttt,4,0.5,64\n");
    }

    #[test]
    fn unsorted_lengths_rejected() {
        assert!(bench_scaling(Variant::Ttt, &[8, 4], &BenchConfig::default()).is_err());
    }

    #[test]
    fn kv_attend_matches_dense_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = Tensor::<f32>::randn(vec![5, 4], 1.0, &mut rng);
        let v = Tensor::<f32>::randn(vec![5, 4], 1.0, &mut rng);
        let q = Tensor::<f32>::randn(vec![1, 4], 1.0, &mut rng);
        let mut cache = KvCache::new(4, 4);
        for i in 0..5 {
            cache.push(&k.data()[i * 4..(i + 1) * 4], &v.data()[i * 4..(i + 1) * 4]);
        }
        let dense = super::super::softmax_attention(&q, &k, &v, false).unwrap();
        let streamed = Tensor::new(vec![1, 4], cache.attend(q.data())).unwrap();
        assert!(dense.max_abs_diff(&streamed) < 1e-6);
    }
}
