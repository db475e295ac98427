//! Python bindings: flask geometry, energy estimates and force scans, the
//! plate bound, the asymptotic (-) energy and the spectral oracles.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use casimir_core::geometry::{DomainKind, FlaskSystem as CoreSystem, Region, Vec3};
use casimir_core::interaction::{self, GridPolicy, Sampling};
use casimir_core::loops::{sample_unit_loop, LazyEnsemble, LoopStream};
use casimir_core::spectral;

fn err(e: casimir_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_kind(kind: &str) -> PyResult<DomainKind> {
    match kind {
        "flask" => Ok(DomainKind::Flask),
        "cylinder" => Ok(DomainKind::Cylinder),
        _ => Err(PyValueError::new_err(format!(
            "kind must be 'flask' or 'cylinder', got {kind:?}"
        ))),
    }
}

#[pyclass(name = "FlaskSystem", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyFlaskSystem {
    inner: CoreSystem,
}

#[pymethods]
impl PyFlaskSystem {
    #[new]
    fn new(
        bulb_radius: f64,
        neck_radius: f64,
        neck_length: f64,
        piston_height: f64,
    ) -> PyResult<Self> {
        let inner =
            CoreSystem::new(bulb_radius, neck_radius, neck_length, piston_height).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn bulb_radius(&self) -> f64 {
        self.inner.bulb_radius
    }

    #[getter]
    fn neck_radius(&self) -> f64 {
        self.inner.neck_radius
    }

    #[getter]
    fn neck_length(&self) -> f64 {
        self.inner.neck_length
    }

    #[getter]
    fn piston_height(&self) -> f64 {
        self.inner.piston_height
    }

    /// Height where the neck opens into the bulb.
    fn junction_z(&self) -> f64 {
        self.inner.junction_z()
    }

    fn with_height(&self, piston_height: f64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_height(piston_height).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!(
            "FlaskSystem(bulb_radius={}, neck_radius={}, neck_length={}, piston_height={})",
            s.bulb_radius, s.neck_radius, s.neck_length, s.piston_height
        )
    }
}

#[pyclass(name = "EnergyEstimate", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyEnergyEstimate {
    piston_height: f64,
    value: f64,
    std_error: f64,
    plus_component: f64,
    minus_component: f64,
    n_plus: u64,
    n_minus: u64,
    n_null: u64,
    tail_warning: bool,
}

#[pymethods]
impl PyEnergyEstimate {
    fn __repr__(&self) -> String {
        format!(
            "EnergyEstimate(piston_height={}, value={:e}, std_error={:e}, n_plus={}, n_minus={})",
            self.piston_height, self.value, self.std_error, self.n_plus, self.n_minus
        )
    }
}

impl From<&interaction::EnergyEstimate> for PyEnergyEstimate {
    fn from(e: &interaction::EnergyEstimate) -> Self {
        Self {
            piston_height: e.piston_height,
            value: e.value,
            std_error: e.std_error,
            plus_component: e.plus_component,
            minus_component: e.minus_component,
            n_plus: e.n_plus,
            n_minus: e.n_minus,
            n_null: e.n_null,
            tail_warning: e.tail_warning,
        }
    }
}

#[pyclass(name = "ScanResult", frozen, get_all, skip_from_py_object)]
struct PyScanResult {
    estimates: Vec<PyEnergyEstimate>,
    /// `(a_mid, force, std_error)` per adjacent pair of heights.
    forces: Vec<(f64, f64, f64)>,
    /// `(bracket_lo, bracket_hi, estimate)` if the force changes sign.
    equilibrium: Option<(f64, f64, f64)>,
}

/// Interaction energy at the system's piston height.
#[pyfunction]
#[pyo3(signature = (system, *, seed, n_loops = 20000, n_points = 4096, x_per_loop = 16, kind = "flask", n_beta = 48))]
#[allow(clippy::too_many_arguments)]
fn estimate_energy(
    py: Python<'_>,
    system: PyRef<'_, PyFlaskSystem>,
    seed: u64,
    n_loops: usize,
    n_points: usize,
    x_per_loop: usize,
    kind: &str,
    n_beta: usize,
) -> PyResult<PyEnergyEstimate> {
    let kind = parse_kind(kind)?;
    let sys = system.inner;
    let policy = GridPolicy {
        n_beta,
        ..GridPolicy::default()
    };
    py.detach(|| {
        let grid = policy.grid_for(&sys)?;
        let source = LazyEnsemble::new(seed, n_points, n_loops)?;
        interaction::estimate_energy(&sys, kind, &grid, &source, Sampling { seed, x_per_loop })
    })
    .map(|e| PyEnergyEstimate::from(&e))
    .map_err(err)
}

/// Energies and forces at several heights sharing all random numbers.
#[pyfunction]
#[pyo3(signature = (system, heights, *, seed, n_loops = 20000, n_points = 4096, x_per_loop = 16, kind = "flask", n_beta = 48))]
#[allow(clippy::too_many_arguments)]
fn force_scan(
    py: Python<'_>,
    system: PyRef<'_, PyFlaskSystem>,
    heights: Vec<f64>,
    seed: u64,
    n_loops: usize,
    n_points: usize,
    x_per_loop: usize,
    kind: &str,
    n_beta: usize,
) -> PyResult<PyScanResult> {
    let kind = parse_kind(kind)?;
    let sys = system.inner;
    let policy = GridPolicy {
        n_beta,
        ..GridPolicy::default()
    };
    let scan = py
        .detach(|| {
            let (lo, hi) = match (heights.first(), heights.last()) {
                (Some(&lo), Some(&hi)) => (lo, hi),
                _ => {
                    return Err(casimir_core::Error::InvalidArgument(
                        "no heights given".into(),
                    ))
                }
            };
            let grid = policy.grid(sys.bulb_radius, lo, hi)?;
            let source = LazyEnsemble::new(seed, n_points, n_loops)?;
            interaction::force_scan(
                &sys,
                kind,
                &heights,
                &grid,
                &source,
                Sampling { seed, x_per_loop },
            )
        })
        .map_err(err)?;
    Ok(PyScanResult {
        estimates: scan.estimates.iter().map(PyEnergyEstimate::from).collect(),
        forces: scan
            .forces
            .iter()
            .map(|f| (f.a_mid, f.force, f.std_error))
            .collect(),
        equilibrium: scan
            .equilibrium
            .map(|e| (e.bracket.0, e.bracket.1, e.estimate)),
    })
}

/// Parallel-plate energy of a disk of radius `r` at separation `d`.
#[pyfunction]
fn plate_bound(r: f64, d: f64) -> PyResult<f64> {
    interaction::plate_bound(r, d).map_err(err)
}

/// `(value, error_estimate, in_regime)` of the asymptotic (-) energy.
#[pyfunction]
#[pyo3(signature = (r, bulb_radius, a, neck_length = None))]
fn asymptotic_minus(
    r: f64,
    bulb_radius: f64,
    a: f64,
    neck_length: Option<f64>,
) -> PyResult<(f64, f64, bool)> {
    let m = interaction::asymptotic_minus_for(r, bulb_radius, a, neck_length).map_err(err)?;
    Ok((m.value, m.error_estimate, m.in_regime))
}

#[pyfunction]
fn phi_interval_eigsum(s: f64, beta: f64) -> PyResult<f64> {
    spectral::phi_interval_eigsum(s, beta).map_err(err)
}

#[pyfunction]
fn phi_interval_poisson(s: f64, beta: f64) -> PyResult<f64> {
    spectral::phi_interval_poisson(s, beta).map_err(err)
}

#[pyfunction]
fn phi_disk_eigsum(r: f64, beta: f64) -> PyResult<f64> {
    spectral::phi_disk_eigsum(r, beta).map_err(err)
}

#[pyfunction]
fn phi_box_eigsum(lx: f64, ly: f64, lz: f64, beta: f64) -> PyResult<f64> {
    spectral::phi_box_eigsum(lx, ly, lz, beta).map_err(err)
}

/// Monte Carlo spectral function of an axis-aligned box: `(value, std_error)`.
#[pyfunction]
#[pyo3(signature = (lx, ly, lz, beta, *, seed, n_samples = 100000, n_points = 4096))]
#[allow(clippy::too_many_arguments)]
fn phi_box_mc(
    py: Python<'_>,
    lx: f64,
    ly: f64,
    lz: f64,
    beta: f64,
    seed: u64,
    n_samples: usize,
    n_points: usize,
) -> PyResult<(f64, f64)> {
    py.detach(|| {
        let region = Region::cuboid(Vec3::new(0.0, 0.0, 0.0), Vec3::new(lx, ly, lz))?;
        let source = LazyEnsemble::new(seed, n_points, n_samples)?;
        spectral::phi_mc(&region, beta, &source, &region, n_samples, seed)
    })
    .map(|e| (e.value, e.std_error))
    .map_err(err)
}

/// Points of one unit loop as `(x, y, z)` tuples.
#[pyfunction]
fn unit_loop(n_points: usize, seed: u64, index: u64) -> PyResult<Vec<(f64, f64, f64)>> {
    let lp = sample_unit_loop(n_points, LoopStream { seed, index }).map_err(err)?;
    Ok(lp.points().iter().map(|p| (p.x, p.y, p.z)).collect())
}

#[pymodule]
pub fn casimir(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFlaskSystem>()?;
    m.add_class::<PyEnergyEstimate>()?;
    m.add_class::<PyScanResult>()?;
    m.add_function(wrap_pyfunction!(estimate_energy, m)?)?;
    m.add_function(wrap_pyfunction!(force_scan, m)?)?;
    m.add_function(wrap_pyfunction!(plate_bound, m)?)?;
    m.add_function(wrap_pyfunction!(asymptotic_minus, m)?)?;
    m.add_function(wrap_pyfunction!(phi_interval_eigsum, m)?)?;
    m.add_function(wrap_pyfunction!(phi_interval_poisson, m)?)?;
    m.add_function(wrap_pyfunction!(phi_disk_eigsum, m)?)?;
    m.add_function(wrap_pyfunction!(phi_box_eigsum, m)?)?;
    m.add_function(wrap_pyfunction!(phi_box_mc, m)?)?;
    m.add_function(wrap_pyfunction!(unit_loop, m)?)?;
    Ok(())
}
