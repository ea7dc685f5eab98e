//! Learnable frequency gate on feature maps.
//!
//! `out = α·irfft2(rfft2(f) ⊙ G) + (1 − α)·f` with a per-channel, per-bin
//! complex gate `G: [C, h, w/2+1, 2]` and a scalar mix `α`. It is evaluated in
//! the algebraically equal residual form `f + α·irfft2(rfft2(f) ⊙ (G − 1))`,
//! so the all-pass gate `G = 1` is the identity exactly, whatever `α`.

use super::{Bound, ParamStore};
use crate::tensor::{Result, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone)]
pub struct LfefFilter {
    gate: String,
    alpha: String,
    channels: usize,
    height: usize,
    width: usize,
}

impl LfefFilter {
    /// Registers an all-pass gate and `α = 1`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, height: usize, width: usize) -> Result<Self> {
        if !(height.is_power_of_two() && width.is_power_of_two() && width >= 2) {
            return Err(TensorError::UnsupportedFftSize { h: height, w: width });
        }
        let gate = format!("{name}.gate");
        let alpha = format!("{name}.alpha");
        let bins = width / 2 + 1;
        let mut g = Tensor::zeros(vec![channels, height, bins, 2]);
        for re in g.data_mut().iter_mut().step_by(2) {
            *re = T::one();
        }
        store.insert(&gate, g);
        store.insert(&alpha, Tensor::ones(vec![1]));
        Ok(Self {
            gate,
            alpha,
            channels,
            height,
            width,
        })
    }

    pub fn gate_name(&self) -> &str {
        &self.gate
    }

    pub fn alpha_name(&self) -> &str {
        &self.alpha
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = f.shape();
        if s.len() != 4 || s[1] != self.channels || s[2] != self.height || s[3] != self.width {
            return Err(TensorError::ShapeMismatch {
                op: "lfef",
                lhs: vec![self.channels, self.height, self.width],
                rhs: s,
            });
        }
        let tape = f.tape();
        let unit = tape.constant(Tensor::new(vec![2], vec![T::one(), T::zero()])?);
        let delta = p.var(&self.gate)?.sub(unit)?;
        let filtered = f.rfft2()?.complex_mul(delta)?.irfft2(self.width)?;
        f.add(filtered.mul(p.var(&self.alpha)?)?)
    }
}

/// Tensor-level gate: `α·irfft2(rfft2(f) ⊙ G) + (1 − α)·f` for
/// `f: [N, C, h, w]` and `gate: [C, h, w/2+1, 2]`.
pub fn lfef_apply<T: Scalar>(f: &Tensor<T>, gate: &Tensor<T>, alpha: T) -> Result<Tensor<T>> {
    let s = f.shape();
    if s.len() != 4 {
        return Err(TensorError::InvalidGeometry {
            op: "lfef",
            detail: format!("expected [N, C, h, w], got {s:?}"),
        });
    }
    let mut store = ParamStore::new();
    let filter = LfefFilter::new(&mut store, "lfef", s[1], s[2], s[3])?;
    store.insert(filter.gate_name(), gate.clone());
    store.insert(filter.alpha_name(), Tensor::full(vec![1], alpha));
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    Ok(filter.forward(&p, tape.constant(f.clone()))?.value())
}
