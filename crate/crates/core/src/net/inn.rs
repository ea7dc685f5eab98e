//! Affine coupling blocks.
//!
//! A block splits channels at the midpoint into `(x₁, x₂)`, keeps the
//! conditioning half and maps the other as `y = x ⊙ exp(s) + t` where
//! `(s_raw, t)` come from a small conv subnet of the conditioning half and
//! `s = tanh(s_raw)` (a soft clamp that keeps `exp(s)` in `(e⁻¹, e)`).
//! Blocks alternate which half conditions the other. The inverse is the exact
//! algebraic inversion `x = (y − t) ⊙ exp(−s)`.

use rand::Rng;

use super::layers::{Conv, Init};
use super::{Bound, ParamStore};
use crate::tensor::{Result, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone)]
pub struct InnBlock {
    /// Channels of the first half.
    split: usize,
    channels: usize,
    /// When set, the second half conditions the first.
    swap: bool,
    hidden: Conv,
    out: Conv,
}

impl InnBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        hidden: usize,
        swap: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if channels < 2 {
            return Err(TensorError::InvalidGeometry {
                op: "inn",
                detail: format!("coupling needs at least 2 channels, got {channels}"),
            });
        }
        let split = channels / 2;
        let (cond, moved) = if swap {
            (channels - split, split)
        } else {
            (split, channels - split)
        };
        Ok(Self {
            split,
            channels,
            swap,
            hidden: Conv::new(store, &format!("{name}.hidden"), cond, hidden, 3, 1, Init::He, rng),
            out: Conv::new(store, &format!("{name}.out"), hidden, 2 * moved, 3, 1, Init::Zero, rng),
        })
    }

    fn halves<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        if x.shape().get(1) != Some(&self.channels) {
            return Err(TensorError::ShapeMismatch {
                op: "inn",
                lhs: vec![self.channels],
                rhs: x.shape(),
            });
        }
        let parts = x.split(1, &[self.split, self.channels - self.split])?;
        Ok(if self.swap {
            (parts[1], parts[0])
        } else {
            (parts[0], parts[1])
        })
    }

    fn join<'t, T: Scalar>(&self, cond: Var<'t, T>, moved: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.swap {
            Var::concat(&[moved, cond], 1)
        } else {
            Var::concat(&[cond, moved], 1)
        }
    }

    /// `(s, t)` from the conditioning half.
    fn coefficients<'t, T: Scalar>(&self, p: &Bound<'t, T>, cond: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let h = self.hidden.forward(p, cond)?.gelu();
        let o = self.out.forward(p, h)?;
        let moved = o.shape()[1] / 2;
        let st = o.split(1, &[moved, moved])?;
        Ok((st[0].tanh(), st[1]))
    }

    /// Returns the output and the per-sample log-determinant `Σ s`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let (cond, moved) = self.halves(x)?;
        let (s, t) = self.coefficients(p, cond)?;
        let y = moved.mul(s.exp())?.add(t)?;
        let n = s.shape()[0];
        let logdet = s.reshape(vec![n, s.value().numel() / n])?.sum_axis(1, false)?;
        Ok((self.join(cond, y)?, logdet))
    }

    pub fn inverse<'t, T: Scalar>(&self, p: &Bound<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        let (cond, moved) = self.halves(y)?;
        let (s, t) = self.coefficients(p, cond)?;
        let x = moved.sub(t)?.mul(s.neg().exp())?;
        self.join(cond, x)
    }
}

/// A stack of coupling blocks with alternating halves.
#[derive(Debug, Clone)]
pub struct Inn {
    blocks: Vec<InnBlock>,
}

impl Inn {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        hidden: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| InnBlock::new(store, &format!("{name}.{i}"), channels, hidden, i % 2 == 1, rng))
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Option<Var<'t, T>>)> {
        let mut cur = x;
        let mut total: Option<Var<'t, T>> = None;
        for b in &self.blocks {
            let (y, ld) = b.forward(p, cur)?;
            cur = y;
            total = Some(match total {
                Some(acc) => acc.add(ld)?,
                None => ld,
            });
        }
        Ok((cur, total))
    }

    pub fn inverse<'t, T: Scalar>(&self, p: &Bound<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut cur = y;
        for b in self.blocks.iter().rev() {
            cur = b.inverse(p, cur)?;
        }
        Ok(cur)
    }

    /// Forward map on plain tensors, returning features and the per-sample
    /// log-determinant (zeros for an empty stack).
    pub fn apply<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let (y, ld) = self.forward(&p, tape.constant(x.clone()))?;
        let ld = ld.map(|v| v.value()).unwrap_or_else(|| Tensor::zeros(vec![x.shape()[0]]));
        Ok((y.value(), ld))
    }

    pub fn invert<T: Scalar>(&self, store: &ParamStore<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        Ok(self.inverse(&p, tape.constant(y.clone()))?.value())
    }
}
