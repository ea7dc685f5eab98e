//! Sequence mixers: softmax attention, compressed (linear-cost) attention,
//! and the test-time-training layer, plus a memory/time scaling harness.

mod bench;
mod softmax;
mod ttt;

use serde::{Deserialize, Serialize};

pub use bench::{bench_scaling, BenchConfig, KvCache, ScalingReport, ScalingRow};
pub use softmax::{attention_weights, compressed_attention, softmax_attention, CompressionMatrices};
pub use ttt::{ttt_forward, ttt_forward_var, ttt_mix, ttt_scan, ScanOrder, TttParams, TttState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Softmax,
    Compressed,
    Ttt,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Softmax, Variant::Compressed, Variant::Ttt];
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(Variant::Softmax),
            "compressed" => Ok(Variant::Compressed),
            "ttt" => Ok(Variant::Ttt),
            other => Err(format!("unknown attention variant `{other}`")),
        }
    }
}

/// Dimensions of an attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub key_dim: usize,
    pub sequence_cap: usize,
    pub variant: Variant,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.model_dim == 0 || self.key_dim == 0 {
            return Err(format!("dims must be positive: d={}, d_k={}", self.model_dim, self.key_dim));
        }
        Ok(())
    }
}
