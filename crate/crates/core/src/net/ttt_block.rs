//! TTT mixing over a feature map.
//!
//! The map `[N, C, h, w]` is cut into non-overlapping `p × p` patches taken in
//! raster order, each flattened channel-major to a token of length `C·p²`.
//! Tokens are embedded linearly, layer-normalized, mixed by a TTT-linear scan,
//! unembedded, folded back, and added to the input. The unembedding starts at
//! zero so the block begins as the identity.
//!
//! Keys are layer-normalized and scaled by `1/√d_k`, so `‖k‖ ≤ 1`, and the
//! inner step size is `η = sigmoid(η_raw) ∈ (0, 1)`. Together they keep the
//! inner update `W ← W − 2η(Wk − v)kᵀ` contractive.

use rand::Rng;

use super::layers::{Init, Linear};
use super::{Bound, ParamStore};
use crate::attention::{ttt_mix, ScanOrder};
use crate::tensor::{Result, Scalar, Tensor, TensorError, Var};

/// `[N, C, h, w] → [N, (h/p)(w/p), C·p²]`.
pub fn patchify<'t, T: Scalar>(x: Var<'t, T>, p: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 || p == 0 || s[2] % p != 0 || s[3] % p != 0 {
        return Err(TensorError::InvalidGeometry {
            op: "patchify",
            detail: format!("shape {s:?} with patch {p}"),
        });
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    x.reshape(vec![n, c, h / p, p, w / p, p])?
        .permute(&[0, 2, 4, 1, 3, 5])?
        .reshape(vec![n, (h / p) * (w / p), c * p * p])
}

/// Inverse of [`patchify`].
pub fn unpatchify<'t, T: Scalar>(tokens: Var<'t, T>, c: usize, h: usize, w: usize, p: usize) -> Result<Var<'t, T>> {
    let n = tokens.shape()[0];
    tokens
        .reshape(vec![n, h / p, w / p, c, p, p])?
        .permute(&[0, 3, 1, 4, 2, 5])?
        .reshape(vec![n, c, h, w])
}

#[derive(Debug, Clone)]
pub struct TttBlock {
    embed: Linear,
    unembed: Linear,
    theta_k: String,
    theta_v: String,
    theta_q: String,
    eta: String,
    key_dim: usize,
    patch: usize,
    order: ScanOrder,
}

#[derive(Debug, Clone, Copy)]
pub struct TttBlockDims {
    pub channels: usize,
    pub patch: usize,
    pub model_dim: usize,
    pub key_dim: usize,
    pub eta: f64,
    pub order: ScanOrder,
}

impl TttBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, dims: TttBlockDims, rng: &mut R) -> Self {
        let token = dims.channels * dims.patch * dims.patch;
        let embed = Linear::new(store, &format!("{name}.embed"), token, dims.model_dim, Init::He, rng);
        let unembed = Linear::new(store, &format!("{name}.unembed"), dims.key_dim, token, Init::Zero, rng);
        let s = 1.0 / (dims.model_dim as f64).sqrt();
        let mut theta = |suffix: &str| {
            let key = format!("{name}.theta_{suffix}");
            store.insert(&key, Tensor::randn(vec![dims.model_dim, dims.key_dim], s, rng));
            key
        };
        let (theta_k, theta_v, theta_q) = (theta("k"), theta("v"), theta("q"));
        let eta = format!("{name}.eta");
        let logit = (dims.eta / (1.0 - dims.eta)).ln();
        store.insert(&eta, Tensor::full(vec![1], T::of(logit)));
        Self {
            embed,
            unembed,
            theta_k,
            theta_v,
            theta_q,
            eta,
            key_dim: dims.key_dim,
            patch: dims.patch,
            order: dims.order,
        }
    }

    /// Number of tokens for an `h × w` map.
    pub fn tokens(&self, h: usize, w: usize) -> usize {
        (h / self.patch) * (w / self.patch)
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let tokens = patchify(x, self.patch)?;
        let e = self.embed.forward(p, tokens)?.layer_norm(1e-5)?;
        let k = e
            .matmul(p.var(&self.theta_k)?)?
            .layer_norm(1e-5)?
            .scale(T::of(1.0 / (self.key_dim as f64).sqrt()));
        let v = e.matmul(p.var(&self.theta_v)?)?;
        let q = e.matmul(p.var(&self.theta_q)?)?;
        let eta = p.var(&self.eta)?.sigmoid();
        let z = ttt_mix(k, v, q, eta, self.order)?;
        let back = self.unembed.forward(p, z)?;
        x.add(unpatchify(back, s[1], s[2], s[3], self.patch)?)
    }
}
