use pyo3::prelude::*;
use pyo3::types::PyModule;

fn with_module<R>(f: impl FnOnce(Python<'_>, &Bound<'_, PyModule>) -> R) -> R {
    pyo3::prepare_freethreaded_python();
    Python::with_gil(|py| {
        let m = PyModule::new(py, "demoire_py").unwrap();
        demoire_py::register(&m).unwrap();
        f(py, &m)
    })
}

#[test]
fn psnr_binding_matches_closed_form() {
    with_module(|_, m| {
        let n = 3 * 12 * 12;
        let p: f64 = m
            .getattr("psnr")
            .unwrap()
            .call1((vec![0.6f32; n], vec![0.5f32; n], vec![3usize, 12, 12]))
            .unwrap()
            .extract()
            .unwrap();
        assert!((p - 20.0).abs() < 1e-3, "{p}");
    });
}

#[test]
fn bad_shapes_and_variants_raise() {
    with_module(|py, m| {
        let err = m
            .getattr("psnr")
            .unwrap()
            .call1((vec![0.0f32; 4], vec![0.0f32; 4], vec![3usize]))
            .unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
        let err = m.getattr("bench").unwrap().call1(("nope", vec![8usize])).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}

#[test]
fn sample_dict_has_expected_shapes() {
    with_module(|_, m| {
        let d = m.getattr("make_sample").unwrap().call1((3u64, 1u64, 16usize)).unwrap();
        let (raw, shape): (Vec<f32>, Vec<usize>) = d.get_item("raw").unwrap().extract().unwrap();
        assert_eq!(shape, vec![4, 8, 8]);
        assert_eq!(raw.len(), 256);
    });
}
