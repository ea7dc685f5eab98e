//! Python bindings. Images cross the boundary as `(flat_values, shape)`
//! pairs of plain lists so the module has no numpy dependency.

use std::path::PathBuf;

use demoire::attention::{bench_scaling, BenchConfig, Variant};
use demoire::flow::FlowConfig;
use demoire::pipeline::{self, RawInput};
use demoire::Tensor;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Flat = (Vec<f32>, Vec<usize>);

fn runtime<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn tensor(values: Vec<f32>, shape: Vec<usize>) -> PyResult<Tensor<f32>> {
    Tensor::new(shape, values).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn flat(t: &Tensor<f32>) -> Flat {
    (t.data().to_vec(), t.shape().to_vec())
}

/// PSNR in dB between two images of the same shape.
#[pyfunction]
fn psnr(pred: Vec<f32>, gt: Vec<f32>, shape: Vec<usize>) -> PyResult<f64> {
    demoire::train::psnr(&tensor(pred, shape.clone())?, &tensor(gt, shape)?).map_err(runtime)
}

/// Gaussian-window SSIM between two `[C, H, W]` images.
#[pyfunction]
fn ssim(pred: Vec<f32>, gt: Vec<f32>, shape: Vec<usize>) -> PyResult<f64> {
    demoire::train::ssim(&tensor(pred, shape.clone())?, &tensor(gt, shape)?).map_err(runtime)
}

/// Synthesizes sample `id` of the dataset seeded with `seed`.
/// Returns a dict with `raw`, `clean` and `degraded` as `(values, shape)`.
#[pyfunction]
fn make_sample<'py>(py: Python<'py>, seed: u64, id: u64, size: usize) -> PyResult<Bound<'py, PyDict>> {
    let s = demoire::synth::make_sample(seed, id, size).map_err(runtime)?;
    let d = PyDict::new(py);
    d.set_item("id", s.id)?;
    d.set_item("raw", flat(&s.raw))?;
    d.set_item("clean", flat(&s.clean))?;
    d.set_item("degraded", flat(&s.degraded))?;
    Ok(d)
}

/// Runs a network checkpoint on one `[4, H/2, W/2]` RAW input, optionally
/// followed by flow refinement with a velocity checkpoint.
#[pyfunction]
#[pyo3(signature = (checkpoint, raw, shape, velocity=None, seed=0))]
fn restore(checkpoint: PathBuf, raw: Vec<f32>, shape: Vec<usize>, velocity: Option<PathBuf>, seed: u64) -> PyResult<Flat> {
    let net = pipeline::load_network(&checkpoint).map_err(runtime)?;
    let vf = velocity.map(|p| pipeline::load_velocity(&p)).transpose().map_err(runtime)?;
    let input = RawInput {
        id: "input".into(),
        raw: tensor(raw, shape)?,
    };
    let flow = FlowConfig {
        seed,
        ..FlowConfig::default()
    };
    let out = pipeline::refine(&net, vf.as_ref(), &flow, &[input]).map_err(runtime)?;
    Ok(flat(&out[0]))
}

/// Times one attention variant over ascending sequence lengths. Returns a
/// list of dicts with `length`, `wall_ms` and `state_bytes`.
#[pyfunction]
#[pyo3(name = "bench", signature = (variant, lengths, model_dim=32, key_dim=32, seed=0))]
fn bench_attention<'py>(
    py: Python<'py>,
    variant: &str,
    lengths: Vec<usize>,
    model_dim: usize,
    key_dim: usize,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let v: Variant = variant.parse().map_err(PyValueError::new_err)?;
    let cfg = BenchConfig { model_dim, key_dim, seed };
    let report = bench_scaling(v, &lengths, &cfg).map_err(runtime)?;
    report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("length", r.length)?;
            d.set_item("wall_ms", r.wall_ms)?;
            d.set_item("state_bytes", r.state_bytes)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn demoire_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds every binding to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(make_sample, m)?)?;
    m.add_function(wrap_pyfunction!(restore, m)?)?;
    m.add_function(wrap_pyfunction!(bench_attention, m)?)?;
    Ok(())
}
