//! TTT-linear sequence mixer.
//!
//! The hidden state is a linear model `W: d_k × d_k`. For each token `x`
//! (projected to `k = θ_Kᵀx`, `v = θ_Vᵀx`, `q = θ_Qᵀx`) the state takes one
//! gradient step on the reconstruction loss `‖W k − v‖²`:
//!
//! ```text
//! W ← W − 2η (W k − v) kᵀ
//! z = W q
//! ```
//!
//! The state never grows with sequence length.

use crate::tensor::{matmul, Result, Scalar, Tape, Tensor, TensorError, Var};

/// Outer (learned) parameters of a TTT layer.
#[derive(Debug, Clone)]
pub struct TttParams<T: Scalar = f32> {
    /// `d × d_k` key projection.
    pub theta_k: Tensor<T>,
    /// `d × d_k` value projection.
    pub theta_v: Tensor<T>,
    /// `d × d_k` query projection.
    pub theta_q: Tensor<T>,
    /// Inner-loop step size.
    pub eta: T,
}

impl<T: Scalar> TttParams<T> {
    pub fn model_dim(&self) -> usize {
        self.theta_k.shape()[0]
    }

    pub fn key_dim(&self) -> usize {
        self.theta_k.shape()[1]
    }

    fn validate(&self) -> Result<()> {
        let s = self.theta_k.shape();
        for other in [&self.theta_v, &self.theta_q] {
            if s.len() != 2 || other.shape() != s {
                return Err(TensorError::ShapeMismatch {
                    op: "ttt params",
                    lhs: s.to_vec(),
                    rhs: other.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Running state of one sequence: the hidden model plus a token counter.
#[derive(Debug, Clone)]
pub struct TttState<T: Scalar = f32> {
    pub hidden: Tensor<T>,
    pub params: TttParams<T>,
    pub token_index: usize,
}

impl<T: Scalar> TttState<T> {
    /// Fresh state with `W = 0`.
    pub fn new(params: TttParams<T>) -> Result<Self> {
        params.validate()?;
        let dk = params.key_dim();
        Ok(Self {
            hidden: Tensor::zeros(vec![dk, dk]),
            params,
            token_index: 0,
        })
    }

    pub fn with_hidden(params: TttParams<T>, hidden: Tensor<T>) -> Result<Self> {
        params.validate()?;
        let dk = params.key_dim();
        if hidden.shape() != [dk, dk] {
            return Err(TensorError::ShapeMismatch {
                op: "ttt hidden",
                lhs: vec![dk, dk],
                rhs: hidden.shape().to_vec(),
            });
        }
        Ok(Self {
            hidden,
            params,
            token_index: 0,
        })
    }

    /// Bytes held by the per-sequence hidden state; independent of position.
    pub fn state_bytes(&self) -> usize {
        self.hidden.numel() * T::DTYPE.size_of()
    }

    /// Consumes one token `x: [d]`, returning the advanced state and `z: [d_k]`.
    pub fn step(self, x: &Tensor<T>) -> Result<(Self, Tensor<T>)> {
        let mut state = self;
        let z = state.advance(x)?;
        Ok((state, z))
    }

    /// In-place form of [`step`](Self::step).
    pub fn advance(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.params.model_dim();
        let dk = self.params.key_dim();
        if x.numel() != d {
            return Err(TensorError::ShapeMismatch {
                op: "ttt_step",
                lhs: vec![d],
                rhs: x.shape().to_vec(),
            });
        }
        let row = x.reshape(vec![1, d])?;
        let k = matmul(&row, &self.params.theta_k)?;
        let v = matmul(&row, &self.params.theta_v)?;
        let q = matmul(&row, &self.params.theta_q)?;
        let (k, v, q) = (k.data(), v.data(), q.data());
        let two_eta = T::of(2.0) * self.params.eta;
        let w = self.hidden.data_mut();
        let mut e = vec![T::zero(); dk];
        for a in 0..dk {
            let mut acc = T::zero();
            for b in 0..dk {
                acc += w[a * dk + b] * k[b];
            }
            e[a] = acc - v[a];
        }
        for a in 0..dk {
            let s = two_eta * e[a];
            for b in 0..dk {
                w[a * dk + b] -= s * k[b];
            }
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite(format!("ttt update (eta = {})", self.params.eta)));
        }
        let mut z = vec![T::zero(); dk];
        for a in 0..dk {
            let mut acc = T::zero();
            for b in 0..dk {
                acc += w[a * dk + b] * q[b];
            }
            z[a] = acc;
        }
        self.token_index += 1;
        Tensor::new(vec![dk], z)
    }
}

/// Runs the recursion over `tokens: [t, d]` from `W = 0`; returns `[t, d_k]`.
pub fn ttt_forward<T: Scalar>(tokens: &Tensor<T>, params: &TttParams<T>) -> Result<Tensor<T>> {
    if tokens.rank() != 2 || tokens.shape()[0] == 0 {
        return Err(TensorError::InvalidGeometry {
            op: "ttt_forward",
            detail: format!("expected [t >= 1, d] tokens, got {:?}", tokens.shape()),
        });
    }
    let (t, d) = (tokens.shape()[0], tokens.shape()[1]);
    let mut state = TttState::new(params.clone())?;
    let mut out = Vec::with_capacity(t * params.key_dim());
    for i in 0..t {
        let x = tokens.narrow(0, i, 1)?.reshape(vec![d])?;
        out.extend_from_slice(state.advance(&x)?.data());
    }
    Tensor::new(vec![t, params.key_dim()], out)
}

/// Direction in which a sequence is scanned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanOrder {
    /// Token `i` is summarized from tokens `0..=i` (raster order for images).
    #[default]
    Causal,
    /// Average of a forward scan and an independent reverse scan.
    Bidirectional,
}

/// Differentiable TTT scan over projected `k, v, q: [N, t, d_k]` with a
/// learned step size `eta` (one element). Outer gradients flow through every
/// unrolled inner update. With `reverse`, tokens are consumed last-to-first.
pub fn ttt_scan<'t, T: Scalar>(
    k: Var<'t, T>,
    v: Var<'t, T>,
    q: Var<'t, T>,
    eta: Var<'t, T>,
    reverse: bool,
) -> Result<Var<'t, T>> {
    let (kt, vt, qt, et) = (k.value(), v.value(), q.value(), eta.value());
    let shape = kt.shape().to_vec();
    if shape.len() != 3 || vt.shape() != shape.as_slice() || qt.shape() != shape.as_slice() {
        return Err(TensorError::ShapeMismatch {
            op: "ttt_scan",
            lhs: shape,
            rhs: vt.shape().to_vec(),
        });
    }
    if et.numel() != 1 {
        return Err(TensorError::ShapeMismatch {
            op: "ttt_scan eta",
            lhs: vec![1],
            rhs: et.shape().to_vec(),
        });
    }
    let (n, t, dk) = (shape[0], shape[1], shape[2]);
    let eta_v = et.data()[0];
    let two_eta = T::of(2.0) * eta_v;
    let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };

    // history[b][s] is W before step s; history[b][t] is the final state.
    let sq = dk * dk;
    let mut history = vec![T::zero(); n * (t + 1) * sq];
    let mut z = vec![T::zero(); n * t * dk];
    let mut e = vec![T::zero(); dk];
    for b in 0..n {
        for (s, &i) in order.iter().enumerate() {
            let base = (b * (t + 1) + s) * sq;
            let (before, after) = history[base..base + 2 * sq].split_at_mut(sq);
            let kk = &kt.data()[(b * t + i) * dk..(b * t + i + 1) * dk];
            let vv = &vt.data()[(b * t + i) * dk..(b * t + i + 1) * dk];
            let qq = &qt.data()[(b * t + i) * dk..(b * t + i + 1) * dk];
            for a in 0..dk {
                let row = &before[a * dk..(a + 1) * dk];
                e[a] = row.iter().zip(kk).map(|(&w, &x)| w * x).sum::<T>() - vv[a];
            }
            for a in 0..dk {
                let s_a = two_eta * e[a];
                for c in 0..dk {
                    after[a * dk + c] = before[a * dk + c] - s_a * kk[c];
                }
            }
            if !after.iter().all(|v| v.is_finite()) {
                return Err(TensorError::NonFinite(format!("ttt update (eta = {eta_v})")));
            }
            let zz = &mut z[(b * t + i) * dk..(b * t + i + 1) * dk];
            for a in 0..dk {
                zz[a] = after[a * dk..(a + 1) * dk].iter().zip(qq).map(|(&w, &x)| w * x).sum();
            }
        }
    }
    let value = Tensor::new(shape.clone(), z)?;
    let tape: &'t Tape<T> = k.tape();
    Ok(tape.record(
        value,
        &[k, v, q, eta],
        Box::new(move |g, _needs| {
            let mut dk_all = vec![T::zero(); n * t * dk];
            let mut dv_all = vec![T::zero(); n * t * dk];
            let mut dq_all = vec![T::zero(); n * t * dk];
            let mut d_eta = T::zero();
            let mut dw = vec![T::zero(); sq];
            let mut e = vec![T::zero(); dk];
            let mut de = vec![T::zero(); dk];
            for b in 0..n {
                dw.fill(T::zero());
                for (s, &i) in order.iter().enumerate().rev() {
                    let base = (b * (t + 1) + s) * sq;
                    let before = &history[base..base + sq];
                    let after = &history[base + sq..base + 2 * sq];
                    let off = (b * t + i) * dk;
                    let kk = &kt.data()[off..off + dk];
                    let vv = &vt.data()[off..off + dk];
                    let qq = &qt.data()[off..off + dk];
                    let gz = &g.data()[off..off + dk];
                    for a in 0..dk {
                        e[a] = before[a * dk..(a + 1) * dk].iter().zip(kk).map(|(&w, &x)| w * x).sum::<T>() - vv[a];
                    }
                    // z = W_after q
                    for a in 0..dk {
                        for c in 0..dk {
                            dw[a * dk + c] += gz[a] * qq[c];
                            dq_all[off + c] += after[a * dk + c] * gz[a];
                        }
                    }
                    // W_after = W_before − 2η e kᵀ
                    for a in 0..dk {
                        let row = &dw[a * dk..(a + 1) * dk];
                        de[a] = -two_eta * row.iter().zip(kk).map(|(&w, &x)| w * x).sum::<T>();
                        for c in 0..dk {
                            dk_all[off + c] -= two_eta * row[c] * e[a];
                            d_eta -= T::of(2.0) * row[c] * e[a] * kk[c];
                        }
                    }
                    // e = W_before k − v
                    for a in 0..dk {
                        for c in 0..dk {
                            dw[a * dk + c] += de[a] * kk[c];
                            dk_all[off + c] += before[a * dk + c] * de[a];
                        }
                        dv_all[off + a] -= de[a];
                    }
                }
            }
            Ok(vec![
                Some(Tensor::new(shape.clone(), dk_all)?),
                Some(Tensor::new(shape.clone(), dv_all)?),
                Some(Tensor::new(shape.clone(), dq_all)?),
                Some(Tensor::full(et.shape().to_vec(), d_eta)),
            ])
        }),
    ))
}

/// Differentiable `ttt_forward` over `tokens: [N, t, d]` with outer
/// parameters on the tape. Returns `[N, t, d_k]`.
pub fn ttt_forward_var<'t, T: Scalar>(
    tokens: Var<'t, T>,
    theta_k: Var<'t, T>,
    theta_v: Var<'t, T>,
    theta_q: Var<'t, T>,
    eta: Var<'t, T>,
    order: ScanOrder,
) -> Result<Var<'t, T>> {
    let k = tokens.matmul(theta_k)?;
    let v = tokens.matmul(theta_v)?;
    let q = tokens.matmul(theta_q)?;
    ttt_mix(k, v, q, eta, order)
}

/// [`ttt_scan`] in the given order; the bidirectional mix averages a forward
/// and a reverse scan.
pub fn ttt_mix<'t, T: Scalar>(k: Var<'t, T>, v: Var<'t, T>, q: Var<'t, T>, eta: Var<'t, T>, order: ScanOrder) -> Result<Var<'t, T>> {
    let fwd = ttt_scan(k, v, q, eta, false)?;
    match order {
        ScanOrder::Causal => Ok(fwd),
        ScanOrder::Bidirectional => {
            let bwd = ttt_scan(k, v, q, eta, true)?;
            Ok(fwd.add(bwd)?.scale(T::of(0.5)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(d: usize, dk: usize, eta: f64, seed: u64) -> TttParams<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let s = 0.4 / (d as f64).sqrt();
        TttParams {
            theta_k: Tensor::randn(vec![d, dk], s, &mut r),
            theta_v: Tensor::randn(vec![d, dk], s, &mut r),
            theta_q: Tensor::randn(vec![d, dk], s, &mut r),
            eta,
        }
    }

    fn project(x: &Tensor<f64>, theta: &Tensor<f64>) -> Vec<f64> {
        matmul(&x.reshape(vec![1, x.numel()]).unwrap(), theta).unwrap().data().to_vec()
    }

    #[test]
    fn frozen_inner_loop_keeps_w() {
        let p = params(6, 4, 0.0, 1);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let w0 = Tensor::randn(vec![4, 4], 1.0, &mut r);
        let x = Tensor::randn(vec![6], 1.0, &mut r);
        let state = TttState::with_hidden(p.clone(), w0.clone()).unwrap();
        let (next, z) = state.step(&x).unwrap();
        assert_eq!(next.hidden, w0);
        assert_eq!(next.token_index, 1);
        let q = Tensor::new(vec![4, 1], project(&x, &p.theta_q)).unwrap();
        let want = matmul(&w0, &q).unwrap();
        assert!(z.max_abs_diff(&want.reshape(vec![4]).unwrap()) < 1e-12);
    }

    #[test]
    fn first_step_from_zero_state() {
        let eta = 0.1;
        let p = params(5, 3, eta, 3);
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn(vec![5], 1.0, &mut r);
        let (k, v, q) = (project(&x, &p.theta_k), project(&x, &p.theta_v), project(&x, &p.theta_q));
        let (state, z) = TttState::new(p).unwrap().step(&x).unwrap();
        let kq: f64 = k.iter().zip(&q).map(|(a, b)| a * b).sum();
        for a in 0..3 {
            for b in 0..3 {
                assert!((state.hidden.at(&[a, b]) - 2.0 * eta * v[a] * k[b]).abs() < 1e-12);
            }
            assert!((z.data()[a] - 2.0 * eta * kq * v[a]).abs() < 1e-12);
        }
        // The closed-form update is the negative gradient step of ‖Wk − v‖² at W = 0.
        let loss = |w: &[f64]| -> f64 {
            (0..3).map(|a| ((0..3).map(|b| w[a * 3 + b] * k[b]).sum::<f64>() - v[a]).powi(2)).sum()
        };
        let h = 1e-6;
        for idx in 0..9 {
            let mut wp = vec![0.0; 9];
            let mut wm = vec![0.0; 9];
            wp[idx] = h;
            wm[idx] = -h;
            let grad = (loss(&wp) - loss(&wm)) / (2.0 * h);
            assert!((state.hidden.data()[idx] - (-eta * grad)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_tokens_give_zero_outputs() {
        let p = params(4, 3, 0.1, 5);
        let z = ttt_forward(&Tensor::zeros(vec![7, 4]), &p).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergent_step_size_is_reported() {
        let mut p = params(4, 3, 1e30, 6);
        p.theta_k = p.theta_k.scale(100.0);
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn(vec![20, 4], 1.0, &mut r);
        let err = ttt_forward(&x, &p).unwrap_err();
        assert!(err.to_string().contains("eta"), "{err}");
    }

    #[test]
    fn scan_matches_stateful_loop() {
        let p = params(6, 4, 0.15, 8);
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn(vec![2, 9, 6], 1.0, &mut r);
        let tape = Tape::<f64>::new();
        let z = ttt_forward_var(
            tape.constant(x.clone()),
            tape.constant(p.theta_k.clone()),
            tape.constant(p.theta_v.clone()),
            tape.constant(p.theta_q.clone()),
            tape.constant(Tensor::full(vec![1], p.eta)),
            ScanOrder::Causal,
        )
        .unwrap()
        .value();
        for b in 0..2 {
            let seq = x.narrow(0, b, 1).unwrap().reshape(vec![9, 6]).unwrap();
            let want = ttt_forward(&seq, &p).unwrap();
            let got = z.narrow(0, b, 1).unwrap().reshape(vec![9, 4]).unwrap();
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn scan_gradients_match_finite_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(10);
        let (n, t, dk) = (2, 5, 3);
        let k = Tensor::<f64>::randn(vec![n, t, dk], 0.5, &mut r);
        let v = Tensor::<f64>::randn(vec![n, t, dk], 0.5, &mut r);
        let q = Tensor::<f64>::randn(vec![n, t, dk], 0.5, &mut r);
        let eta = Tensor::full(vec![1], 0.2);
        for reverse in [false, true] {
            let err = gradcheck::max_rel_err(
                &[k.clone(), v.clone(), q.clone(), eta.clone()],
                |_, xs| ttt_scan(xs[0], xs[1], xs[2], xs[3], reverse),
                1e-6,
                11,
            )
            .unwrap();
            assert!(err < 1e-6, "reverse={reverse} rel err {err}");
        }
    }
}
