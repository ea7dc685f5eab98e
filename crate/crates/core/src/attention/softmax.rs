use crate::tensor::{matmul, matmul_nt, Result, Scalar, Tensor, TensorError};

fn check_qkv<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, op: &'static str) -> Result<()> {
    let mismatch = |a: &Tensor<T>, b: &Tensor<T>| TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 {
        return Err(mismatch(q, k));
    }
    if q.shape()[1] != k.shape()[1] {
        return Err(mismatch(q, k));
    }
    if k.shape()[0] != v.shape()[0] {
        return Err(mismatch(k, v));
    }
    Ok(())
}

/// Row-stochastic weight matrix `softmax(QKᵀ/√d_k)`, optionally causal
/// (query `i` sees keys `0..=i`; requires as many queries as keys).
pub fn attention_weights<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, causal: bool) -> Result<Tensor<T>> {
    let dk = q.shape()[1];
    let mut scores = matmul_nt(q, k)?.scale(T::of(1.0 / (dk as f64).sqrt()));
    if causal {
        let (tq, tk) = (scores.shape()[0], scores.shape()[1]);
        if tq != tk {
            return Err(TensorError::ShapeMismatch {
                op: "causal attention",
                lhs: q.shape().to_vec(),
                rhs: k.shape().to_vec(),
            });
        }
        let data = scores.data_mut();
        for i in 0..tq {
            for j in i + 1..tk {
                data[i * tk + j] = T::neg_infinity();
            }
        }
    }
    scores.softmax(1)
}

/// `z = softmax(QKᵀ/√d_k) V` for `Q: [t_q, d_k]`, `K: [t, d_k]`, `V: [t, d]`.
pub fn softmax_attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, causal: bool) -> Result<Tensor<T>> {
    check_qkv(q, k, v, "softmax_attention")?;
    matmul(&attention_weights(q, k, causal)?, v)
}

/// Square mixing matrices producing `K′ = W_k K` and `V′ = W_v V`.
#[derive(Debug, Clone)]
pub struct CompressionMatrices<T: Scalar = f32> {
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
}

impl<T: Scalar> CompressionMatrices<T> {
    pub fn identity(t: usize) -> Self {
        let mut eye = vec![T::zero(); t * t];
        for i in 0..t {
            eye[i * t + i] = T::one();
        }
        let eye = Tensor::new(vec![t, t], eye).expect("square");
        Self { w_k: eye.clone(), w_v: eye }
    }

    pub fn compress(&self, k: &Tensor<T>, v: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        Ok((matmul(&self.w_k, k)?, matmul(&self.w_v, v)?))
    }
}

/// `z = softmax(Q K′ᵀ/√d_k) V′` with the compressed key/value stacks.
pub fn compressed_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    comp: &CompressionMatrices<T>,
) -> Result<Tensor<T>> {
    check_qkv(q, k, v, "compressed_attention")?;
    let t = k.shape()[0];
    for w in [&comp.w_k, &comp.w_v] {
        if w.rank() != 2 || w.shape()[0] != w.shape()[1] || w.shape()[1] != t {
            return Err(TensorError::ShapeMismatch {
                op: "compressed_attention",
                lhs: w.shape().to_vec(),
                rhs: k.shape().to_vec(),
            });
        }
    }
    let (kc, vc) = comp.compress(k, v)?;
    softmax_attention(q, &kc, &vc, false)
}
