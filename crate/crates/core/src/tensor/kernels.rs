use super::{check_axis, numel, Result, Scalar, Tensor, TensorError};

/// Trailing-dimension broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    strides
}

/// Strides of `shape` viewed inside `out_shape`, zero on broadcast dims.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(shape);
    let offset = out_shape.len() - shape.len();
    (0..out_shape.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visits every multi-index of `shape` in row-major order, yielding the
/// flat offsets computed from each stride set.
fn for_each_offset<const K: usize>(shape: &[usize], strides: [&[usize]; K], mut f: impl FnMut([usize; K])) {
    let n = numel(shape);
    if n == 0 {
        return;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut offs = [0usize; K];
    for _ in 0..n {
        f(offs);
        for d in (0..rank).rev() {
            idx[d] += 1;
            for k in 0..K {
                offs[k] += strides[k][d];
            }
            if idx[d] < shape[d] {
                break;
            }
            for k in 0..K {
                offs[k] -= strides[k][d] * shape[d];
            }
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(b.data.iter()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape.clone(), data));
    }
    let out_shape = broadcast_shape(&a.shape, &b.shape).ok_or_else(|| TensorError::ShapeMismatch {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })?;
    if b.numel() == 1 {
        let y = b.data[0];
        let data = a.data.iter().map(|&x| f(x, y)).collect();
        return Ok(Tensor::from_parts(out_shape, data));
    }
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let mut data = Vec::with_capacity(numel(&out_shape));
    for_each_offset(&out_shape, [&sa, &sb], |[ia, ib]| data.push(f(a.data[ia], b.data[ib])));
    Ok(Tensor::from_parts(out_shape, data))
}

pub(crate) fn sum_to_shape<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if g.shape == shape {
        return Ok(g.clone());
    }
    match broadcast_shape(shape, &g.shape) {
        Some(s) if s == g.shape => {}
        _ => {
            return Err(TensorError::ShapeMismatch {
                op: "sum_to_shape",
                lhs: g.shape.clone(),
                rhs: shape.to_vec(),
            })
        }
    }
    let st = broadcast_strides(shape, &g.shape);
    let sg = contiguous_strides(&g.shape);
    let mut out = vec![T::zero(); numel(shape)];
    for_each_offset(&g.shape, [&sg, &st], |[ig, it]| out[it] += g.data[ig]);
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

pub(crate) fn permute<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(TensorError::InvalidGeometry {
            op: "permute",
            detail: format!("{perm:?} is not a permutation of rank {rank}"),
        });
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape[p]).collect();
    let src = contiguous_strides(&x.shape);
    let strides: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
    let mut data = Vec::with_capacity(x.numel());
    for_each_offset(&out_shape, [&strides], |[i]| data.push(x.data[i]));
    Ok(Tensor::from_parts(out_shape, data))
}

/// Splits a shape around `axis` into (outer, extent, inner) block sizes.
pub(crate) fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

pub(crate) fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| TensorError::InvalidGeometry {
        op: "concat",
        detail: "no inputs".into(),
    })?;
    check_axis(axis, first.rank())?;
    let mut total = 0;
    for p in parts {
        let compatible = p.rank() == first.rank()
            && p.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.shape.clone(),
                rhs: p.shape.clone(),
            });
        }
        total += p.shape[axis];
    }
    let mut out_shape = first.shape.clone();
    out_shape[axis] = total;
    let (outer, _, inner) = axis_blocks(&first.shape, axis);
    let mut data = Vec::with_capacity(numel(&out_shape));
    for o in 0..outer {
        for p in parts {
            let block = p.shape[axis] * inner;
            data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

pub(crate) fn narrow<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    check_axis(axis, x.rank())?;
    if len == 0 || start + len > x.shape[axis] {
        return Err(TensorError::InvalidGeometry {
            op: "narrow",
            detail: format!("range {start}..{} outside extent {}", start + len, x.shape[axis]),
        });
    }
    let (outer, extent, inner) = axis_blocks(&x.shape, axis);
    let mut out_shape = x.shape.clone();
    out_shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * extent * inner + start * inner;
        data.extend_from_slice(&x.data[base..base + len * inner]);
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// Inverse of [`narrow`]: embeds `g` into zeros of `full_shape`.
pub(crate) fn pad_narrow<T: Scalar>(g: &Tensor<T>, full_shape: &[usize], axis: usize, start: usize) -> Tensor<T> {
    let (outer, extent, inner) = axis_blocks(full_shape, axis);
    let len = g.shape[axis];
    let mut out = vec![T::zero(); numel(full_shape)];
    for o in 0..outer {
        let base = o * extent * inner + start * inner;
        out[base..base + len * inner].copy_from_slice(&g.data[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(full_shape.to_vec(), out)
}

pub(crate) fn sum_axis<T: Scalar>(x: &Tensor<T>, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
    check_axis(axis, x.rank())?;
    let (outer, extent, inner) = axis_blocks(&x.shape, axis);
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for e in 0..extent {
            let src = &x.data[(o * extent + e) * inner..(o * extent + e + 1) * inner];
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let mut shape = x.shape.clone();
    if keepdim {
        shape[axis] = 1;
    } else {
        shape.remove(axis);
    }
    Ok(Tensor::from_parts(shape, out))
}

/// Repeats `g` (with `axis` of extent 1 or removed) `extent` times along `axis`.
pub(crate) fn expand_axis<T: Scalar>(g: &Tensor<T>, full_shape: &[usize], axis: usize) -> Tensor<T> {
    let (outer, extent, inner) = axis_blocks(full_shape, axis);
    let mut out = Vec::with_capacity(numel(full_shape));
    for o in 0..outer {
        let row = &g.data[o * inner..(o + 1) * inner];
        for _ in 0..extent {
            out.extend_from_slice(row);
        }
    }
    Tensor::from_parts(full_shape.to_vec(), out)
}

/// Numerically stable softmax (max-subtracted) along `axis`.
pub(crate) fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis(axis, x.rank())?;
    let (outer, extent, inner) = axis_blocks(&x.shape, axis);
    let mut out = vec![T::zero(); x.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |e: usize| (o * extent + e) * inner + i;
            let mut m = x.data[at(0)];
            for e in 1..extent {
                m = m.max(x.data[at(e)]);
            }
            let mut z = T::zero();
            for e in 0..extent {
                let v = (x.data[at(e)] - m).exp();
                out[at(e)] = v;
                z += v;
            }
            for e in 0..extent {
                out[at(e)] = out[at(e)] / z;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape.clone(), out))
}

fn matmul_dims<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    if a.rank() < 2 || b.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let k = *a.shape.last().unwrap();
    let m = a.numel() / k.max(1);
    Ok((m, k, b.shape[0]))
}

/// `[.., m, k] x [k, n] -> [.., m, n]`. Leading dims of `a` are flattened into rows.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k, kb) = matmul_dims(a, b, "matmul")?;
    if k != kb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let n = b.shape[1];
    let mut out = vec![T::zero(); m * n];
    gemm_nn(&a.data, &b.data, &mut out, m, k, n);
    let mut shape = a.shape.clone();
    *shape.last_mut().unwrap() = n;
    Ok(Tensor::from_parts(shape, out))
}

/// `a · bᵀ` with `a: [.., m, k]`, `b: [n, k]`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k, n) = matmul_dims(a, b, "matmul_nt")?;
    if b.shape[1] != k {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_nt",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    gemm_nt(&a.data, &b.data, &mut out, m, k, n);
    let mut shape = a.shape.clone();
    *shape.last_mut().unwrap() = n;
    Ok(Tensor::from_parts(shape, out))
}

/// `aᵀ · b` with `a: [m, k]` (leading dims flattened), `b: [m, n]` → `[k, n]`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ka = *a.shape.last().unwrap_or(&0);
    let nb = *b.shape.last().unwrap_or(&0);
    if a.rank() < 2 || b.rank() < 2 || ka == 0 || nb == 0 || a.numel() / ka != b.numel() / nb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_tn",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let m = a.numel() / ka;
    let mut out = vec![T::zero(); ka * nb];
    gemm_tn(&a.data, &b.data, &mut out, m, ka, nb);
    Ok(Tensor::from_parts(vec![ka, nb], out))
}

/// out[m×n] += a[m×k] · b[k×n]
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · b[m×n]
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[4, 1, 3], &[2, 1]), Some(vec![4, 2, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
    }

    /// Explicitly tiles both operands to the broadcast shape, then adds.
    fn tiled_add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let shape = broadcast_shape(a.shape(), b.shape()).unwrap();
        let rank = shape.len();
        let fetch = |t: &Tensor<f64>, idx: &[usize]| {
            let off = rank - t.rank();
            let local: Vec<usize> = (0..t.rank())
                .map(|d| if t.shape()[d] == 1 { 0 } else { idx[d + off] })
                .collect();
            t.at(&local)
        };
        let n = numel(&shape);
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0; rank];
        for flat in 0..n {
            let mut r = flat;
            for d in (0..rank).rev() {
                idx[d] = r % shape[d];
                r /= shape[d];
            }
            data.push(fetch(a, &idx) + fetch(b, &idx));
        }
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn broadcasting_matches_tiling_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dims = [1usize, 2, 3];
        let mut shapes: Vec<Vec<usize>> = vec![vec![]];
        for rank in 1..=4 {
            for code in 0..dims.len().pow(rank as u32) {
                let mut c = code;
                let s: Vec<usize> = (0..rank)
                    .map(|_| {
                        let d = dims[c % 3];
                        c /= 3;
                        d
                    })
                    .collect();
                shapes.push(s);
            }
        }
        let mut checked = 0;
        for (i, sa) in shapes.iter().enumerate().step_by(3) {
            for sb in shapes.iter().skip(i % 5).step_by(4) {
                if broadcast_shape(sa, sb).is_none() {
                    continue;
                }
                let a = Tensor::<f64>::randn(sa.clone(), 1.0, &mut rng);
                let b = Tensor::<f64>::randn(sb.clone(), 1.0, &mut rng);
                let got = a.add(&b).unwrap();
                let want = tiled_add(&a, &b);
                assert_eq!(got, want, "{sa:?} + {sb:?}");
                checked += 1;
            }
        }
        assert!(checked > 200, "only {checked} shape pairs exercised");
    }

    #[test]
    fn matmul_hand_cases() {
        let a = Tensor::from_slice(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = Tensor::from_slice(&[2, 1], &[1.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &ones).unwrap().data(), &[3.0, 7.0]);
        let eye = Tensor::from_slice(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(matmul(&eye, &a).unwrap(), a);
        assert!(matmul(&a, &Tensor::zeros(vec![3, 1])).is_err());
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::<f64>::randn(vec![5, 7], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(vec![7, 3], 1.0, &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for p in 0..7 {
                    s += a.at(&[i, p]) * b.at(&[p, j]);
                }
                assert_eq!(c.at(&[i, j]), s);
            }
        }
        let bt = b.transpose().unwrap();
        assert!(matmul_nt(&a, &bt).unwrap().max_abs_diff(&c) < 1e-12);
        let at = a.transpose().unwrap();
        assert!(matmul_tn(&at, &b).unwrap().max_abs_diff(&c) < 1e-12);
    }

    #[test]
    fn softmax_basics() {
        let one = Tensor::from_slice(&[1], &[3.7]).unwrap();
        assert_eq!(one.softmax(0).unwrap().data(), &[1.0]);
        let z = Tensor::from_slice(&[2], &[0.0, 0.0]).unwrap();
        assert_eq!(z.softmax(0).unwrap().data(), &[0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::randn(vec![4, 6], 2.0, &mut rng);
        let shifted = x.add(&Tensor::scalar(5.25)).unwrap();
        let d = x.softmax(1).unwrap().max_abs_diff(&shifted.softmax(1).unwrap());
        assert!(d < 1e-6, "{d}");
        let rows = x.softmax(1).unwrap().sum_axis(1, false).unwrap();
        for &r in rows.data() {
            assert!((r - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_narrow_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f32>::randn(vec![2, 5, 3], 1.0, &mut rng);
        let a = x.narrow(1, 0, 2).unwrap();
        let b = x.narrow(1, 2, 3).unwrap();
        assert_eq!(Tensor::concat(&[&a, &b], 1).unwrap(), x);
        assert!(x.narrow(1, 4, 2).is_err());
    }
}
