use std::cell::RefCell;
use std::fmt;

use super::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use super::fft::{irfft2, irfft2_adjoint, rfft2, rfft2_adjoint};
use super::kernels::{self, axis_blocks};
use super::resize::ResizePlan;
use super::{check_axis, Conv2dSpec, Result, Scalar, Tensor, TensorError};

/// Backward rule of one recorded op: maps the upstream gradient to one
/// gradient per parent. `needs[i]` is false when parent `i` is untracked, in
/// which case the rule may return `None` for it.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    tracked: bool,
}

/// Record of one differentiable computation. Nodes are appended in
/// evaluation order, so every op's inputs precede it.
pub struct Tape<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}

/// Gradients of a scalar loss with respect to the tracked leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar = f32> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_, T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shapes[v.id].clone()))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Registers a differentiable leaf (a parameter or input of interest).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            tracked: true,
        })
    }

    /// Registers a value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            tracked: false,
        })
    }

    /// Records a custom op. The backward rule is dropped when no parent is
    /// tracked.
    pub fn record<'t>(&'t self, value: Tensor<T>, parents: &[Var<'t, T>], backward: BackwardFn<T>) -> Var<'t, T> {
        let tracked = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].tracked)
        };
        self.push(Node {
            value,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: tracked.then_some(backward),
            tracked,
        })
    }

    /// Reverse sweep from a one-element `loss`. Only leaf gradients are kept.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        if root.tracked {
            grads[loss.id] = Some(Tensor::ones(root.value.shape().to_vec()));
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else { continue };
            let Some(g) = grads[id].take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].tracked).collect();
            let parent_grads = backward(&g, &needs)?;
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let (Some(pg), true) = (pg, need) else { continue };
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape for node {p}");
                match grads[p].as_mut() {
                    Some(acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    None => grads[p] = Some(pg),
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn ok1<T: Scalar>(g: Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
    Ok(vec![Some(g)])
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// The recorded value (shares storage).
    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.nodes.borrow()[self.id].tracked
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant(self.value())
    }

    fn unary(&self, value: Tensor<T>, backward: impl Fn(&Tensor<T>) -> Result<Tensor<T>> + 'static) -> Var<'t, T> {
        self.tape.record(value, &[*self], Box::new(move |g, _| ok1(backward(g)?)))
    }

    fn binary(
        &self,
        rhs: Var<'t, T>,
        value: Tensor<T>,
        backward: impl Fn(&Tensor<T>, &[bool]) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> + 'static,
    ) -> Var<'t, T> {
        self.tape.record(
            value,
            &[*self, rhs],
            Box::new(move |g, needs| {
                let (a, b) = backward(g, needs)?;
                Ok(vec![a, b])
            }),
        )
    }

    pub fn add(&self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), rhs.value());
        let value = a.add(&b)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.binary(rhs, value, move |g, n| {
            Ok((
                n[0].then(|| g.sum_to_shape(&sa)).transpose()?,
                n[1].then(|| g.sum_to_shape(&sb)).transpose()?,
            ))
        }))
    }

    pub fn sub(&self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), rhs.value());
        let value = a.sub(&b)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.binary(rhs, value, move |g, n| {
            Ok((
                n[0].then(|| g.sum_to_shape(&sa)).transpose()?,
                n[1].then(|| g.scale(-T::one()).sum_to_shape(&sb)).transpose()?,
            ))
        }))
    }

    pub fn mul(&self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), rhs.value());
        let value = a.mul(&b)?;
        Ok(self.binary(rhs, value, move |g, n| {
            Ok((
                n[0].then(|| g.mul(&b)?.sum_to_shape(a.shape())).transpose()?,
                n[1].then(|| g.mul(&a)?.sum_to_shape(b.shape())).transpose()?,
            ))
        }))
    }

    /// Elementwise division; exactly-zero divisors are rejected.
    pub fn div(&self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), rhs.value());
        let value = a.div(&b)?;
        let out = value.clone();
        Ok(self.binary(rhs, value, move |g, n| {
            let ga = g.div(&b)?;
            Ok((
                n[0].then(|| ga.sum_to_shape(a.shape())).transpose()?,
                n[1].then(|| ga.mul(&out)?.scale(-T::one()).sum_to_shape(b.shape())).transpose()?,
            ))
        }))
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn maximum(&self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), rhs.value());
        let value = a.maximum(&b)?;
        Ok(self.binary(rhs, value, move |g, n| {
            let pick_a = a.broadcast_with(&b, "max", |x, y| if x >= y { T::one() } else { T::zero() })?;
            let pick_b = pick_a.map(|m| T::one() - m);
            Ok((
                n[0].then(|| g.mul(&pick_a)?.sum_to_shape(a.shape())).transpose()?,
                n[1].then(|| g.mul(&pick_b)?.sum_to_shape(b.shape())).transpose()?,
            ))
        }))
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        self.unary(self.value().scale(c), move |g| Ok(g.scale(c)))
    }

    pub fn add_scalar(&self, c: T) -> Var<'t, T> {
        self.unary(self.value().map(|v| v + c), |g| Ok(g.clone()))
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn exp(&self) -> Var<'t, T> {
        let y = self.value().map(|v| v.exp());
        let saved = y.clone();
        self.unary(y, move |g| g.mul(&saved))
    }

    pub fn square(&self) -> Var<'t, T> {
        let x = self.value();
        let two = T::of(2.0);
        self.unary(x.map(|v| v * v), move |g| g.zip_map(&x, |gv, xv| gv * two * xv))
    }

    /// `|x|`, with subgradient 0 at 0.
    pub fn abs(&self) -> Var<'t, T> {
        let x = self.value();
        self.unary(x.map(|v| v.abs()), move |g| {
            g.zip_map(&x, |gv, xv| {
                if xv > T::zero() {
                    gv
                } else if xv < T::zero() {
                    -gv
                } else {
                    T::zero()
                }
            })
        })
    }

    pub fn relu(&self) -> Var<'t, T> {
        let x = self.value();
        self.unary(x.map(|v| v.max(T::zero())), move |g| {
            g.zip_map(&x, |gv, xv| if xv > T::zero() { gv } else { T::zero() })
        })
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        let y = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        let saved = y.clone();
        self.unary(y, move |g| g.zip_map(&saved, |gv, yv| gv * yv * (T::one() - yv)))
    }

    pub fn tanh(&self) -> Var<'t, T> {
        let y = self.value().map(|v| v.tanh());
        let saved = y.clone();
        self.unary(y, move |g| g.zip_map(&saved, |gv, yv| gv * (T::one() - yv * yv)))
    }

    /// GELU, tanh approximation: `0.5 x (1 + tanh(√(2/π)(x + 0.044715 x³)))`.
    pub fn gelu(&self) -> Var<'t, T> {
        let x = self.value();
        let c = T::of((2.0 / std::f64::consts::PI).sqrt());
        let a = T::of(0.044715);
        let half = T::of(0.5);
        let three = T::of(3.0);
        let y = x.map(|v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()));
        self.unary(y, move |g| {
            g.zip_map(&x, |gv, v| {
                let t = (c * (v + a * v * v * v)).tanh();
                let d = half * (T::one() + t) + half * v * (T::one() - t * t) * c * (T::one() + three * a * v * v);
                gv * d
            })
        })
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.unary(Tensor::scalar(x.sum()), move |g| Ok(Tensor::full(shape.clone(), g.item())))
    }

    pub fn mean(&self) -> Var<'t, T> {
        let n = T::of(self.value().numel() as f64);
        self.sum().scale(T::one() / n)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Var<'t, T>> {
        let x = self.value();
        let y = x.sum_axis(axis, keepdim)?;
        let shape = x.shape().to_vec();
        Ok(self.unary(y, move |g| Ok(kernels::expand_axis(g, &shape, axis))))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Var<'t, T>> {
        let n = self.shape().get(axis).copied().unwrap_or(1);
        Ok(self.sum_axis(axis, keepdim)?.scale(T::one() / T::of(n as f64)))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let x = self.value();
        let y = x.reshape(shape)?;
        let orig = x.shape().to_vec();
        Ok(self.unary(y, move |g| g.reshape(orig.clone())))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t, T>> {
        let y = self.value().permute(perm)?;
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(self.unary(y, move |g| g.permute(&inverse)))
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&self) -> Result<Var<'t, T>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(TensorError::InvalidAxis { axis: 1, rank: r });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidGeometry {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().collect();
        let y = Tensor::concat(&refs, axis)?;
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        Ok(first.tape.record(
            y,
            parts,
            Box::new(move |g, needs| {
                let mut start = 0;
                let mut out = Vec::with_capacity(extents.len());
                for (&len, &need) in extents.iter().zip(needs) {
                    out.push(need.then(|| g.narrow(axis, start, len)).transpose()?);
                    start += len;
                }
                Ok(out)
            }),
        ))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let y = x.narrow(axis, start, len)?;
        let shape = x.shape().to_vec();
        Ok(self.unary(y, move |g| Ok(kernels::pad_narrow(g, &shape, axis, start))))
    }

    /// Splits into consecutive chunks of the given extents along `axis`.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Var<'t, T>>> {
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let v = self.narrow(axis, start, len);
                start += len;
                v
            })
            .collect()
    }

    /// `[.., m, k] × [k, n]`; `dA = dC·Bᵀ`, `dB = Aᵀ·dC`.
    pub fn matmul(&self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), rhs.value());
        let value = kernels::matmul(&a, &b)?;
        Ok(self.binary(rhs, value, move |g, n| {
            Ok((
                n[0].then(|| kernels::matmul_nt(g, &b)).transpose()?,
                n[1].then(|| kernels::matmul_tn(&a, g)).transpose()?,
            ))
        }))
    }

    /// 2-D convolution of `self: [N, C, H, W]` with `kernel: [O, C, kh, kw]`
    /// plus an optional per-channel `bias: [O]`.
    pub fn conv2d(&self, kernel: Var<'t, T>, bias: Option<Var<'t, T>>, spec: Conv2dSpec) -> Result<Var<'t, T>> {
        let (x, k) = (self.value(), kernel.value());
        let geom = ConvGeom::new(x.shape(), k.shape(), spec)?;
        let mut y = conv2d_forward(&geom, &x, &k);
        let out_shape = y.shape().to_vec();
        let (n, o) = (out_shape[0], out_shape[1]);
        let plane = out_shape[2] * out_shape[3];
        let mut parents = vec![*self, kernel];
        if let Some(b) = bias {
            let bv = b.value();
            if bv.shape() != [o] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![o],
                    rhs: bv.shape().to_vec(),
                });
            }
            let data = y.data_mut();
            for i in 0..n {
                for c in 0..o {
                    let bc = bv.data()[c];
                    for v in &mut data[(i * o + c) * plane..(i * o + c + 1) * plane] {
                        *v += bc;
                    }
                }
            }
            parents.push(b);
        }
        Ok(self.tape.record(
            y,
            &parents,
            Box::new(move |g, needs| {
                let (dx, dk) = conv2d_backward(&geom, &x, &k, g, needs[0], needs[1]);
                let mut out = vec![dx, dk];
                if needs.len() == 3 {
                    let db = needs[2].then(|| {
                        let mut db = vec![T::zero(); o];
                        for i in 0..n {
                            for (c, acc) in db.iter_mut().enumerate() {
                                for &v in &g.data()[(i * o + c) * plane..(i * o + c + 1) * plane] {
                                    *acc += v;
                                }
                            }
                        }
                        Tensor::from_parts(vec![o], db)
                    });
                    out.push(db);
                }
                Ok(out)
            }),
        ))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        let y = self.value().softmax(axis)?;
        let saved = y.clone();
        Ok(self.unary(y, move |g| {
            let gy = g.mul(&saved)?;
            let dot = gy.sum_axis(axis, true)?;
            gy.sub(&saved.mul(&dot)?)
        }))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&self, eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let r = x.rank();
        check_axis(r.saturating_sub(1), r)?;
        let (rows, d, _) = axis_blocks(x.shape(), r - 1);
        let dn = T::of(d as f64);
        let eps = T::of(eps);
        let mut y = vec![T::zero(); x.numel()];
        let mut inv_std = vec![T::zero(); rows];
        for i in 0..rows {
            let row = &x.data()[i * d..(i + 1) * d];
            let mu = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
            let s = T::one() / (var + eps).sqrt();
            inv_std[i] = s;
            for (o, &v) in y[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = (v - mu) * s;
            }
        }
        let y = Tensor::from_parts(x.shape().to_vec(), y);
        let saved = y.clone();
        Ok(self.unary(y, move |g| {
            let mut dx = vec![T::zero(); g.numel()];
            for i in 0..rows {
                let gr = &g.data()[i * d..(i + 1) * d];
                let yr = &saved.data()[i * d..(i + 1) * d];
                let mg = gr.iter().copied().sum::<T>() / dn;
                let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / dn;
                for j in 0..d {
                    dx[i * d + j] = inv_std[i] * (gr[j] - mg - yr[j] * mgy);
                }
            }
            Ok(Tensor::from_parts(g.shape().to_vec(), dx))
        }))
    }

    pub fn bilinear_resize(&self, scale: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let plan = ResizePlan::new(x.shape(), scale)?;
        if scale == 1.0 {
            return Ok(*self);
        }
        let y = plan.forward(&x);
        let shape = x.shape().to_vec();
        Ok(self.unary(y, move |g| Ok(plan.backward(g, &shape))))
    }

    /// Half-spectrum FFT of the last two dims; see [`super::rfft2`].
    pub fn rfft2(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        let y = rfft2(&x)?;
        let w = *x.shape().last().unwrap();
        Ok(self.unary(y, move |g| rfft2_adjoint(g, w)))
    }

    pub fn irfft2(&self, width: usize) -> Result<Var<'t, T>> {
        let y = irfft2(&self.value(), width)?;
        Ok(self.unary(y, irfft2_adjoint))
    }

    /// Complex product over a trailing (re, im) axis, broadcasting the rest.
    pub fn complex_mul(&self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let ax = self.shape().len().checked_sub(1).ok_or(TensorError::InvalidAxis { axis: 0, rank: 0 })?;
        let bx = rhs.shape().len().checked_sub(1).ok_or(TensorError::InvalidAxis { axis: 0, rank: 0 })?;
        if self.shape()[ax] != 2 || rhs.shape()[bx] != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "complex_mul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (ar, ai) = (self.narrow(ax, 0, 1)?, self.narrow(ax, 1, 1)?);
        let (br, bi) = (rhs.narrow(bx, 0, 1)?, rhs.narrow(bx, 1, 1)?);
        let re = ar.mul(br)?.sub(ai.mul(bi)?)?;
        let im = ar.mul(bi)?.add(ai.mul(br)?)?;
        let axis = re.shape().len() - 1;
        Var::concat(&[re, im], axis)
    }

    /// Depth-to-space: `[N, C·r², H, W] → [N, C, H·r, W·r]`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Var<'t, T>> {
        let s = self.shape();
        if s.len() != 4 || r == 0 || s[1] % (r * r) != 0 {
            return Err(TensorError::InvalidGeometry {
                op: "pixel_shuffle",
                detail: format!("shape {s:?} with factor {r}"),
            });
        }
        let (n, c, h, w) = (s[0], s[1] / (r * r), s[2], s[3]);
        self.reshape(vec![n, c, r, r, h, w])?
            .permute(&[0, 1, 4, 2, 5, 3])?
            .reshape(vec![n, c, h * r, w * r])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_and_quadratic_gradients() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_slice64(&[2], &[1.0, 2.0]).unwrap());
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0]);
        let g = tape.backward(x.square().sum()).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(vec![3]));
        assert_eq!(tape.backward(x).unwrap_err(), TensorError::NonScalarLoss(vec![3]));
    }

    #[test]
    fn product_gradient_is_other_factor() {
        let tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::from_slice(&[3], &[1.0, -2.0, 0.5]).unwrap());
        let b = tape.leaf(Tensor::from_slice(&[3], &[4.0, 5.0, -6.0]).unwrap());
        let g = tape.backward(a.mul(b).unwrap().sum()).unwrap();
        assert_eq!(g.wrt(a), b.value());
        assert_eq!(g.wrt(b), a.value());
    }

    #[test]
    fn unused_leaf_gets_zero_gradient_of_same_shape() {
        let tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::ones(vec![2, 2]));
        let b = tape.leaf(Tensor::ones(vec![5]));
        let g = tape.backward(a.sum()).unwrap();
        assert!(g.get(b).is_none());
        assert_eq!(g.wrt(b).shape(), &[5]);
    }

    #[test]
    fn constants_are_not_tracked() {
        let tape = Tape::<f32>::new();
        let c = tape.constant(Tensor::ones(vec![2]));
        let x = tape.leaf(Tensor::ones(vec![2]));
        let y = c.mul(c).unwrap();
        assert!(!y.is_tracked());
        let g = tape.backward(y.mul(x).unwrap().sum()).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0]);
    }

    #[test]
    fn pixel_shuffle_layout() {
        let tape = Tape::<f32>::new();
        let data: Vec<f32> = (0..8).map(|v| v as f32).collect();
        let x = tape.constant(Tensor::from_slice(&[1, 4, 1, 2], &data).unwrap());
        let y = x.pixel_shuffle(2).unwrap().value();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        // channel (i*2+j) lands at sub-pixel (i, j)
        assert_eq!(y.data(), &[0.0, 2.0, 1.0, 3.0, 4.0, 6.0, 5.0, 7.0]);
    }
}
