use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{Result, Scalar, Tensor, TensorError};

/// Stride and symmetric zero padding of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }

    /// Stride 1 with padding that preserves spatial size for odd kernels.
    pub const fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    pub(crate) fn new(input: &[usize], kernel: &[usize], spec: Conv2dSpec) -> Result<Self> {
        let bad = |detail: String| TensorError::InvalidGeometry { op: "conv2d", detail };
        if input.len() != 4 || kernel.len() != 4 {
            return Err(bad(format!("expected NCHW input and OCkhkw kernel, got {input:?} and {kernel:?}")));
        }
        if input[1] != kernel[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        if spec.stride == 0 {
            return Err(bad("stride must be positive".into()));
        }
        let (h, w) = (input[2], input[3]);
        let (kh, kw) = (kernel[2], kernel[3]);
        let (ph, pw) = (h + 2 * spec.padding, w + 2 * spec.padding);
        if kh == 0 || kw == 0 || kh > ph || kw > pw {
            return Err(bad(format!("kernel {kh}x{kw} exceeds padded input {ph}x{pw}")));
        }
        Ok(Self {
            n: input[0],
            c: input[1],
            h,
            w,
            o: kernel[0],
            kh,
            kw,
            oh: (ph - kh) / spec.stride + 1,
            ow: (pw - kw) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.padding,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    pub(crate) fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.o, self.oh, self.ow]
    }

    /// Source pixel for output position `o` and kernel tap `k` along one axis.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }

    fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T]) {
        let np = self.out_pixels();
        for c in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * np..(row + 1) * np];
                    for oy in 0..self.oh {
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match self.src(oy, ky, self.h) {
                            None => line.fill(T::zero()),
                            Some(iy) => {
                                let src = &img[(c * self.h + iy) * self.w..(c * self.h + iy + 1) * self.w];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.src(ox, kx, self.w) {
                                        Some(ix) => src[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], img: &mut [T]) {
        let np = self.out_pixels();
        for c in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * np..(row + 1) * np];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else { continue };
                        let dst = &mut img[(c * self.h + iy) * self.w..(c * self.h + iy + 1) * self.w];
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                dst[ix] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input: [N, C, H, W]` with `kernel: [O, C, kh, kw]`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, spec: Conv2dSpec) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input.shape(), kernel.shape(), spec)?;
    Ok(conv2d_forward(&g, input, kernel))
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeom, input: &Tensor<T>, kernel: &Tensor<T>) -> Tensor<T> {
    let np = g.out_pixels();
    let in_stride = g.c * g.h * g.w;
    let out_stride = g.o * np;
    let mut out = vec![T::zero(); g.n * out_stride];
    let mut cols = vec![T::zero(); g.patch() * np];
    for n in 0..g.n {
        let img = &input.data()[n * in_stride..(n + 1) * in_stride];
        g.im2col(img, &mut cols);
        gemm_nn(kernel.data(), &cols, &mut out[n * out_stride..(n + 1) * out_stride], g.o, g.patch(), np);
    }
    Tensor::from_parts(g.out_shape(), out)
}

/// Returns (d_input, d_kernel) for upstream gradient `grad_out`.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
    need_kernel: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let np = g.out_pixels();
    let in_stride = g.c * g.h * g.w;
    let out_stride = g.o * np;
    let mut d_in = need_input.then(|| vec![T::zero(); input.numel()]);
    let mut d_k = need_kernel.then(|| vec![T::zero(); kernel.numel()]);
    let mut cols = vec![T::zero(); g.patch() * np];
    for n in 0..g.n {
        let go = &grad_out.data()[n * out_stride..(n + 1) * out_stride];
        if let Some(dk) = d_k.as_mut() {
            g.im2col(&input.data()[n * in_stride..(n + 1) * in_stride], &mut cols);
            gemm_nt(go, &cols, dk, g.o, np, g.patch());
        }
        if let Some(di) = d_in.as_mut() {
            cols.fill(T::zero());
            gemm_tn(kernel.data(), go, &mut cols, g.o, g.patch(), np);
            g.col2im(&cols, &mut di[n * in_stride..(n + 1) * in_stride]);
        }
    }
    (
        d_in.map(|d| Tensor::from_parts(input.shape().to_vec(), d)),
        d_k.map(|d| Tensor::from_parts(kernel.shape().to_vec(), d)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct sliding-window evaluation.
    fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Vec::new();
        for b in 0..n {
            for oc in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s = 0.0;
                        for ic in 0..c {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let iy = (y * stride + dy) as isize - pad as isize;
                                    let ix = (xx * stride + dx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        s += x.at(&[b, ic, iy as usize, ix as usize]) * k.at(&[oc, ic, dy, dx]);
                                    }
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
        Tensor::new(vec![n, o, oh, ow], out).unwrap()
    }

    #[test]
    fn one_by_one_unit_kernel_sums_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f32>::randn(vec![1, 3, 4, 5], 1.0, &mut rng);
        let k = Tensor::ones(vec![1, 3, 1, 1]);
        let y = conv2d(&x, &k, Conv2dSpec::new(1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 5]);
        let want = x.sum_axis(1, true).unwrap();
        assert!(y.max_abs_diff(&want) < 1e-6);
    }

    #[test]
    fn box_kernel_on_constant_field() {
        let c = 0.3f32;
        let x = Tensor::full(vec![1, 2, 6, 6], c);
        let k = Tensor::ones(vec![1, 2, 3, 3]);
        let y = conv2d(&x, &k, Conv2dSpec::new(1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        for &v in y.data() {
            assert!((v - 9.0 * c * 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn matches_sliding_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(stride, pad, kh) in &[(1, 1, 3), (2, 1, 3), (1, 0, 2), (2, 0, 1), (3, 2, 5)] {
            let x = Tensor::<f64>::randn(vec![2, 3, 9, 8], 1.0, &mut rng);
            let k = Tensor::<f64>::randn(vec![4, 3, kh, kh], 1.0, &mut rng);
            let got = conv2d(&x, &k, Conv2dSpec::new(stride, pad)).unwrap();
            let want = conv_oracle(&x, &k, stride, pad);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-5);
        }
    }

    #[test]
    fn output_size_formula() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 7, 10]);
        let k = Tensor::<f32>::zeros(vec![2, 1, 3, 3]);
        let y = conv2d(&x, &k, Conv2dSpec::new(2, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 2, (7 + 2 - 3) / 2 + 1, (10 + 2 - 3) / 2 + 1]);
    }

    #[test]
    fn rejects_bad_geometry() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 2]);
        let k = Tensor::<f32>::zeros(vec![1, 1, 3, 3]);
        assert!(conv2d(&x, &k, Conv2dSpec::new(1, 0)).is_err());
        let k2 = Tensor::<f32>::zeros(vec![1, 2, 1, 1]);
        assert!(conv2d(&x, &k2, Conv2dSpec::new(1, 0)).is_err());
        assert!(conv2d(&x, &Tensor::zeros(vec![1, 1, 1, 1]), Conv2dSpec::new(0, 0)).is_err());
    }
}
