use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyDict>)>(f: F) {
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(casimir::casimir)(py);
        let locals = PyDict::new(py);
        locals.set_item("casimir", m).unwrap();
        f(py, &locals);
    });
}

fn eval(py: Python<'_>, locals: &Bound<'_, PyDict>, code: &str) -> f64 {
    let code = std::ffi::CString::new(code).unwrap();
    py.eval(&code, None, Some(locals))
        .unwrap()
        .extract()
        .unwrap()
}

#[test]
fn oracles_are_exposed() {
    with_module(|py, l| {
        let d = eval(
            py,
            l,
            "casimir.phi_interval_poisson(1.0, 0.1) - casimir.phi_interval_eigsum(1.0, 0.1)",
        );
        assert!((d - 0.5).abs() < 1e-10);
        let b = eval(py, l, "casimir.plate_bound(0.1, 2.05)");
        assert!((b + 2.4993411684e-5).abs() < 1e-14);
    });
}

#[test]
fn invalid_geometry_raises_value_error() {
    with_module(|py, l| {
        let code = std::ffi::CString::new("casimir.FlaskSystem(1.0, -0.5, 3.0, 0.5)").unwrap();
        let e = py.eval(&code, None, Some(l)).unwrap_err();
        assert!(e.is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}

#[test]
fn cylinder_scan_is_null() {
    with_module(|py, l| {
        let s = eval(
            py,
            l,
            "sum(abs(e.value) for e in casimir.force_scan(casimir.FlaskSystem(1.0, 0.5, 3.0, 0.5), \
             [0.25, 0.5, 1.0], seed=1, n_loops=100, n_points=128, kind='cylinder').estimates)",
        );
        assert_eq!(s, 0.0);
    });
}
