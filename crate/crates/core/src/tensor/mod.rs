//! Dense row-major tensors and a reverse-mode differentiation tape.
//!
//! [`Tensor`] is an immutable value (its storage is reference counted, so
//! clones are cheap and tensors can be shared across threads). Differentiable
//! computation happens on an explicit [`Tape`]: values are registered as
//! [`Var`] handles, every op records its backward rule, and
//! [`Tape::backward`] walks the record in reverse.
//!
//! Broadcasting follows the trailing-dimension rule: shapes are right-aligned,
//! missing leading dimensions count as 1, and a dimension of extent 1 expands
//! to match the other operand.

mod autodiff;
mod conv;
mod fft;
pub mod gradcheck;
mod io;
mod kernels;
mod resize;

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use autodiff::{Gradients, Tape, Var};
pub use fft::{fft2_inplace, half_spectrum_energy, irfft2, rfft2};
pub use io::{read_tensor, write_tensor};
pub use kernels::{broadcast_shape, matmul, matmul_nt, matmul_tn};
pub use resize::bilinear_resize;
pub use conv::{conv2d, Conv2dSpec};

/// Errors raised by tensor construction and tensor ops.
#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("division by exact zero")]
    DivisionByZero,
    #[error("{op}: invalid geometry: {detail}")]
    InvalidGeometry { op: &'static str, detail: String },
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("fft: unsupported spatial size {h}x{w} (both must be powers of two)")]
    UnsupportedFftSize { h: usize, w: usize },
    #[error("backward: loss must hold exactly one element, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("tensor dump: {0}")]
    Format(String),
    #[error("unknown parameter `{0}`")]
    MissingParam(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Element precision of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        })
    }
}

/// Floating-point element type of a [`Tensor`]; implemented for `f32` and `f64`.
pub trait Scalar:
    num_traits::Float
    + rustfft::FftNum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const DTYPE: DType;

    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

pub use num_traits::Float;

/// Dense row-major array. Storage is shared; every op allocates its result.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("dtype", &T::DTYPE)
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    /// Builds a tensor whose length is known to match; used by kernels.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::from_parts(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape.clone())
    }

    pub fn ones_like(&self) -> Self {
        Self::ones(self.shape.clone())
    }

    /// Samples i.i.d. `N(0, std^2)` entries.
    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::of(z * std)
            })
            .collect();
        Self::from_parts(shape, data)
    }

    /// Samples i.i.d. entries uniformly from `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(
        shape: impl Into<Vec<usize>>,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        let data = (0..n)
            .map(|_| T::of(rng.random_range(lo..hi)))
            .collect();
        Self::from_parts(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    /// Returns the storage, copying only if it is shared.
    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// Mutable access to the storage (copy-on-write).
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::of(v.f64())).collect(),
        )
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.rank(), "index rank");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "zip_map",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in self.data.iter() {
            acc += v;
        }
        acc
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.numel() as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shapes");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise op with trailing-dimension broadcasting.
    pub fn broadcast_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        kernels::broadcast_binary(self, other, op, f)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.broadcast_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.broadcast_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.broadcast_with(other, "mul", |a, b| a * b)
    }

    /// Elementwise division; any exactly-zero divisor is an error.
    pub fn div(&self, other: &Self) -> Result<Self> {
        if other.data.iter().any(|&v| v == T::zero()) {
            return Err(TensorError::DivisionByZero);
        }
        self.broadcast_with(other, "div", |a, b| a / b)
    }

    pub fn maximum(&self, other: &Self) -> Result<Self> {
        self.broadcast_with(other, "max", |a, b| if a >= b { a } else { b })
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    /// Sums `self` down to `shape`, undoing a broadcast.
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Self> {
        kernels::sum_to_shape(self, shape)
    }

    /// Reorders dimensions: output dim `i` is input dim `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        kernels::permute(self, perm)
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&self) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return Err(TensorError::InvalidAxis { axis: 1, rank: r });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        kernels::concat(parts, axis)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        kernels::narrow(self, axis, start, len)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Self> {
        kernels::sum_axis(self, axis, keepdim)
    }

    pub fn softmax(&self, axis: usize) -> Result<Self> {
        kernels::softmax(self, axis)
    }
}

impl Tensor<f32> {
    /// Convenience constructor for tests and fixtures.
    pub fn from_slice(shape: &[usize], data: &[f32]) -> Result<Self> {
        Self::new(shape.to_vec(), data.to_vec())
    }
}

impl Tensor<f64> {
    pub fn from_slice64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.to_vec())
    }
}

/// Normalizes a possibly-negative axis index.
pub(crate) fn check_axis(axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(TensorError::InvalidAxis { axis, rank })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert_eq!(Tensor::<f32>::scalar(3.0).shape(), &[] as &[usize]);
    }

    #[test]
    fn add_and_identity_mul() {
        let a = Tensor::from_slice(&[2], &[1.0, 2.0]).unwrap();
        let b = Tensor::from_slice(&[2], &[3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        let x = Tensor::<f32>::randn(vec![3, 4], 1.0, &mut rand::rng());
        assert_eq!(x.mul(&x.ones_like()).unwrap(), x);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros(vec![2, 3]);
        let b = Tensor::<f32>::zeros(vec![4]);
        let err = a.add(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn div_by_zero_is_error() {
        let a = Tensor::<f32>::ones(vec![2]);
        let b = Tensor::from_slice(&[2], &[1.0, 0.0]).unwrap();
        assert_eq!(a.div(&b).unwrap_err(), TensorError::DivisionByZero);
    }

    #[test]
    fn transpose_round_trip() {
        let x = Tensor::<f32>::randn(vec![3, 5], 1.0, &mut rand::rng());
        let back = x.transpose().unwrap().transpose().unwrap();
        assert_eq!(back, x);
        assert_eq!(x.transpose().unwrap().at(&[4, 2]), x.at(&[2, 4]));
    }
}
