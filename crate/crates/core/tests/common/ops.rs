//! Table of every differentiable primitive, each wired to a small random
//! input generator, for finite-difference checking in both precisions.

use demoire::attention::{ttt_forward_var, ttt_scan, ScanOrder};
use demoire::tensor::{gradcheck, Conv2dSpec, Result, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type OpFn<T> = for<'t> fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>;
type Gen = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;

pub struct Case {
    pub name: &'static str,
    gen: Gen,
    single: OpFn<f32>,
    double: OpFn<f64>,
}

pub const F32_STEP: f64 = 1e-2;
pub const F64_STEP: f64 = 1e-5;

macro_rules! case {
    ($name:literal, $gen:expr, $op:ident) => {
        Case {
            name: $name,
            gen: $gen,
            single: $op::<f32>,
            double: $op::<f64>,
        }
    };
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, rng)
}

/// Values with magnitude at least 0.2 so that ±step never crosses a kink.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = 0.2 + rng.random::<f64>();
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn two(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![randn(&[3, 4], rng), randn(&[3, 4], rng)]
}
fn one(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![randn(&[2, 3, 4], rng)]
}
fn kinked(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![away_from_zero(&[2, 3, 4], rng)]
}
fn bcast(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![randn(&[2, 3, 4], rng), randn(&[3, 1], rng)]
}
fn divisor(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let d = away_from_zero(&[3, 4], rng).map(|v| v + v.signum());
    vec![randn(&[3, 4], rng), d]
}
fn separated(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let a = randn(&[3, 4], rng);
    let gap = away_from_zero(&[3, 4], rng);
    let b = a.add(&gap).unwrap();
    vec![a, b]
}
fn mm(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![randn(&[2, 3, 4], rng), randn(&[4, 5], rng)]
}
fn conv(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![randn(&[2, 2, 5, 5], rng), randn(&[3, 2, 3, 3], rng), randn(&[3], rng)]
}
fn image(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![randn(&[1, 2, 8, 8], rng)]
}
fn spectrum(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![randn(&[2, 4, 5, 2], rng)]
}
fn complex_pair(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![randn(&[2, 4, 3, 2], rng), randn(&[4, 3, 2], rng)]
}
fn shuffle(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![randn(&[1, 8, 3, 3], rng)]
}
fn scan(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let s = 0.5;
    vec![
        Tensor::randn(vec![2, 5, 3], s, rng),
        Tensor::randn(vec![2, 5, 3], s, rng),
        Tensor::randn(vec![2, 5, 3], s, rng),
        Tensor::full(vec![1], 0.1 + 0.2 * rng.random::<f64>()),
    ]
}
fn ttt(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let s = 0.3;
    vec![
        randn(&[2, 6, 4], rng),
        Tensor::randn(vec![4, 3], s, rng),
        Tensor::randn(vec![4, 3], s, rng),
        Tensor::randn(vec![4, 3], s, rng),
        Tensor::full(vec![1], 0.1 + 0.2 * rng.random::<f64>()),
    ]
}

fn add<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].add(x[1])
}
fn sub<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].sub(x[1])
}
fn mul<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].mul(x[1])
}
fn div<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].div(x[1])
}
fn maximum<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].maximum(x[1])
}
fn bcast_mul_add<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].mul(x[1])?.add(x[1])
}
fn scale<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    Ok(x[0].scale(T::of(-1.7)).add_scalar(T::of(0.3)).neg())
}
fn exp<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    Ok(x[0].exp())
}
fn square<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    Ok(x[0].square())
}
fn abs<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    Ok(x[0].abs())
}
fn relu<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    Ok(x[0].relu())
}
fn sigmoid<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    Ok(x[0].sigmoid())
}
fn tanh<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    Ok(x[0].tanh())
}
fn gelu<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    Ok(x[0].gelu())
}
fn sum<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    Ok(x[0].square().sum())
}
fn mean<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    Ok(x[0].square().mean())
}
fn sum_axis<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].square().sum_axis(1, false)
}
fn mean_axis<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].square().mean_axis(2, true)
}
fn reshape<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].square().reshape(vec![6, 4])
}
fn permute<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].square().permute(&[2, 0, 1])
}
fn transpose<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].square().transpose()
}
fn concat<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    Var::concat(&[x[0], x[1].square(), x[0]], 1)
}
fn narrow<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].square().narrow(2, 1, 2)
}
fn split<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let parts = x[0].split(2, &[1, 3])?;
    parts[1].sum_axis(2, true)?.mul(parts[0].square())
}
fn matmul<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].matmul(x[1])
}
fn conv2d<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].conv2d(x[1], Some(x[2]), Conv2dSpec::new(2, 1))
}
fn conv2d_same<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].conv2d(x[1], None, Conv2dSpec::same(3))
}
fn softmax<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].softmax(1)
}
fn layer_norm<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].layer_norm(1e-5)
}
fn resize_down<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].bilinear_resize(0.5)
}
fn resize_up<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].bilinear_resize(2.0)
}
fn resize_quarter<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].bilinear_resize(0.25)
}
fn rfft2<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].rfft2()
}
fn irfft2<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].irfft2(8)
}
fn complex_mul<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].complex_mul(x[1])
}
fn pixel_shuffle<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    x[0].pixel_shuffle(2)
}
fn scan_fwd<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    ttt_scan(x[0], x[1], x[2], x[3], false)
}
fn scan_rev<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    ttt_scan(x[0], x[1], x[2], x[3], true)
}
fn ttt_causal<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    ttt_forward_var(x[0], x[1], x[2], x[3], x[4], ScanOrder::Causal)
}
fn ttt_bidir<'t, T: Scalar>(_: &'t Tape<T>, x: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    ttt_forward_var(x[0], x[1], x[2], x[3], x[4], ScanOrder::Bidirectional)
}

pub fn cases() -> Vec<Case> {
    vec![
        case!("add", two, add),
        case!("sub", two, sub),
        case!("mul", two, mul),
        case!("div", divisor, div),
        case!("maximum", separated, maximum),
        case!("broadcast mul/add", bcast, bcast_mul_add),
        case!("scale/add_scalar/neg", one, scale),
        case!("exp", one, exp),
        case!("square", one, square),
        case!("abs", kinked, abs),
        case!("relu", kinked, relu),
        case!("sigmoid", one, sigmoid),
        case!("tanh", one, tanh),
        case!("gelu", one, gelu),
        case!("sum", one, sum),
        case!("mean", one, mean),
        case!("sum_axis", one, sum_axis),
        case!("mean_axis", one, mean_axis),
        case!("reshape", one, reshape),
        case!("permute", one, permute),
        case!("transpose", one, transpose),
        case!("concat", two, concat),
        case!("narrow", one, narrow),
        case!("split", one, split),
        case!("matmul", mm, matmul),
        case!("conv2d stride 2 + bias", conv, conv2d),
        case!("conv2d same", conv, conv2d_same),
        case!("softmax", one, softmax),
        case!("layer_norm", one, layer_norm),
        case!("bilinear 0.5", image, resize_down),
        case!("bilinear 0.25", image, resize_quarter),
        case!("bilinear 2", image, resize_up),
        case!("rfft2", image, rfft2),
        case!("irfft2", spectrum, irfft2),
        case!("complex_mul", complex_pair, complex_mul),
        case!("pixel_shuffle", shuffle, pixel_shuffle),
        case!("ttt_scan", scan, scan_fwd),
        case!("ttt_scan reverse", scan, scan_rev),
        case!("ttt_forward causal", ttt, ttt_causal),
        case!("ttt_forward bidirectional", ttt, ttt_bidir),
    ]
}

/// Worst relative error of one case across `seeds`, in single and double
/// precision.
pub fn worst_errors(case: &Case, seeds: std::ops::Range<u64>) -> Result<(f64, f64)> {
    let (mut single, mut double) = (0.0f64, 0.0f64);
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (case.gen)(&mut rng);
        let as32: Vec<Tensor<f32>> = inputs.iter().map(|t| t.cast()).collect();
        single = single.max(gradcheck::max_rel_err(&as32, case.single, F32_STEP, seed)?);
        double = double.max(gradcheck::max_rel_err(&inputs, case.double, F64_STEP, seed)?);
    }
    Ok((single, double))
}
