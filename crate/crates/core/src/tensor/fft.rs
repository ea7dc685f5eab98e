//! 2-D FFTs over the last two dimensions (power-of-two sizes).
//!
//! Half spectra are stored as real/imaginary pairs in a trailing axis of
//! extent 2: `rfft2` maps `[.., H, W]` to `[.., H, W/2 + 1, 2]`.
//!
//! `irfft2` is the linear map
//! `x[n] = (1/HW) Σ_{k1} Σ_{k2 <= W/2} c(k2) Re(Y[k1,k2] e^{+iθ})` with
//! `c = 1` on the DC and Nyquist columns and `c = 2` elsewhere, which is the
//! exact inverse of `rfft2` and well defined for any half spectrum.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{Result, Scalar, Tensor, TensorError};

fn check_size(h: usize, w: usize) -> Result<()> {
    if h.is_power_of_two() && w.is_power_of_two() && w >= 2 {
        Ok(())
    } else {
        Err(TensorError::UnsupportedFftSize { h, w })
    }
}

/// Unnormalized 2-D transform of an `h × w` row-major block.
pub fn fft2_inplace<T: Scalar>(buf: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    assert_eq!(buf.len(), h * w);
    let mut planner = FftPlanner::<T>::new();
    let (rows, cols) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    rows.process(buf);
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        cols.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

fn spatial_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if x.rank() < 2 {
        return Err(TensorError::InvalidGeometry {
            op: "rfft2",
            detail: format!("need at least 2 dims, got {:?}", x.shape()),
        });
    }
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    check_size(h, w)?;
    Ok((x.numel() / (h * w), h, w))
}

/// Real-input 2-D FFT of the last two dims, returning the half spectrum.
pub fn rfft2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, h, w) = spatial_dims(x)?;
    let wh = w / 2 + 1;
    let mut out = Vec::with_capacity(batch * h * wh * 2);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); h * w];
    for b in 0..batch {
        let plane = &x.data()[b * h * w..(b + 1) * h * w];
        for (c, &v) in buf.iter_mut().zip(plane) {
            *c = Complex::new(v, T::zero());
        }
        fft2_inplace(&mut buf, h, w, false);
        for y in 0..h {
            for k in 0..wh {
                let z = buf[y * w + k];
                out.push(z.re);
                out.push(z.im);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 1] = wh;
    shape.push(2);
    Ok(Tensor::from_parts(shape, out))
}

/// Spatial `(h, w)` of a half spectrum `[.., h, w/2+1, 2]`; `w` must be given
/// since odd/even cannot be recovered from the bin count.
fn half_dims<T: Scalar>(spec: &Tensor<T>, w: usize) -> Result<(usize, usize, usize)> {
    let r = spec.rank();
    if r < 3 || spec.shape()[r - 1] != 2 || spec.shape()[r - 2] != w / 2 + 1 {
        return Err(TensorError::InvalidGeometry {
            op: "irfft2",
            detail: format!("spectrum shape {:?} does not match width {w}", spec.shape()),
        });
    }
    let h = spec.shape()[r - 3];
    check_size(h, w)?;
    Ok((spec.numel() / (h * (w / 2 + 1) * 2), h, w / 2 + 1))
}

/// Inverse of [`rfft2`]; `width` is the spatial width of the output.
pub fn irfft2<T: Scalar>(spec: &Tensor<T>, width: usize) -> Result<Tensor<T>> {
    let (batch, h, wh) = half_dims(spec, width)?;
    let w = width;
    let norm = T::of(1.0 / (h * w) as f64);
    let mut out = Vec::with_capacity(batch * h * w);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); h * w];
    for b in 0..batch {
        let s = &spec.data()[b * h * wh * 2..(b + 1) * h * wh * 2];
        buf.fill(Complex::new(T::zero(), T::zero()));
        for y in 0..h {
            for k in 0..wh {
                let c = if k == 0 || k == w / 2 { T::one() } else { T::of(2.0) };
                let i = (y * wh + k) * 2;
                buf[y * w + k] = Complex::new(s[i] * c, s[i + 1] * c);
            }
        }
        fft2_inplace(&mut buf, h, w, true);
        out.extend(buf.iter().map(|z| z.re * norm));
    }
    let mut shape = spec.shape()[..spec.rank() - 1].to_vec();
    let r = shape.len();
    shape[r - 1] = w;
    Ok(Tensor::from_parts(shape, out))
}

/// Adjoint of [`rfft2`]: `dx = Re(IFFT_unnormalized(zero-extended g))`.
pub(crate) fn rfft2_adjoint<T: Scalar>(g: &Tensor<T>, width: usize) -> Result<Tensor<T>> {
    let (batch, h, wh) = half_dims(g, width)?;
    let w = width;
    let mut out = Vec::with_capacity(batch * h * w);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); h * w];
    for b in 0..batch {
        let s = &g.data()[b * h * wh * 2..(b + 1) * h * wh * 2];
        buf.fill(Complex::new(T::zero(), T::zero()));
        for y in 0..h {
            for k in 0..wh {
                let i = (y * wh + k) * 2;
                buf[y * w + k] = Complex::new(s[i], s[i + 1]);
            }
        }
        fft2_inplace(&mut buf, h, w, true);
        out.extend(buf.iter().map(|z| z.re));
    }
    let mut shape = g.shape()[..g.rank() - 1].to_vec();
    let r = shape.len();
    shape[r - 1] = w;
    Ok(Tensor::from_parts(shape, out))
}

/// Adjoint of [`irfft2`]: `dY = c(k2)/(HW) · rfft2(g)`.
pub(crate) fn irfft2_adjoint<T: Scalar>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let r = g.rank();
    let (h, w) = (g.shape()[r - 2], g.shape()[r - 1]);
    let mut spec = rfft2(g)?;
    let wh = w / 2 + 1;
    let norm = 1.0 / (h * w) as f64;
    for (i, v) in spec.data_mut().iter_mut().enumerate() {
        let k = (i / 2) % wh;
        let c = if k == 0 || k == w / 2 { 1.0 } else { 2.0 };
        *v = *v * T::of(c * norm);
    }
    Ok(spec)
}

/// `Σ|X|²` over the full spectrum, reconstructed from the half spectrum by
/// Hermitian symmetry (interior columns counted twice).
pub fn half_spectrum_energy<T: Scalar>(spec: &Tensor<T>, width: usize) -> Result<f64> {
    let (_, _, wh) = half_dims(spec, width)?;
    let mut e = 0.0;
    for (i, pair) in spec.data().chunks(2).enumerate() {
        let k = i % wh;
        let c = if k == 0 || k == width / 2 { 1.0 } else { 2.0 };
        let (re, im) = (pair[0].f64(), pair[1].f64());
        e += c * (re * re + im * im);
    }
    Ok(e)
}
