//! Python bindings. Matrices cross the boundary as nested lists of rows;
//! points on spheres and in ℝⁿ as flat lists.

use bm::estimation::{
    estimate_son_with, extrinsic_mean, CovarianceStructure, LocationMethod,
};
use bm::integrals::{
    brownian_on_partition, ito_sum, quadratic_variation, stratonovich_sum, Partition,
};
use bm::liegroup::{sample_brownian_dist_many, so_basis, BrownianDistParams};
use bm::linalg::matrix_exp;
use bm::process::{
    antidevelop, develop, simulate_bm_euclidean, simulate_bm_manifold, simulate_ensemble,
};
use bm::series::{rearrangement_experiment, Permutation, RearrangementMode};
use bm::{Error, FrameAtPoint, GaussianStream, ManifoldSpec, Path, Point, SimConfig};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(brownian_manifold, DomainError, PyException);
create_exception!(brownian_manifold, DegenerateError, PyException);
create_exception!(brownian_manifold, DivergedError, PyException);
create_exception!(brownian_manifold, UnsupportedError, PyException);

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Input(_) | Error::Json(_) => PyValueError::new_err(msg),
        Error::Domain(_) => DomainError::new_err(msg),
        Error::Degenerate(_) => DegenerateError::new_err(msg),
        Error::Diverged { .. } => DivergedError::new_err(msg),
        Error::Unsupported(_) => UnsupportedError::new_err(msg),
        Error::Io(e) => e.into(),
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn parse_manifold(spec: &str) -> PyResult<ManifoldSpec> {
    spec.parse().map_err(py_err)
}

/// A point as handed to Python: vectors flat, matrices as rows.
fn point_value(py: Python<'_>, m: ManifoldSpec, p: &Point) -> PyResult<Py<PyAny>> {
    Ok(match m {
        ManifoldSpec::SpecialOrthogonal(_) => to_rows(p.matrix()).into_pyobject(py)?.into_any().unbind(),
        _ => p.coords().to_vec().into_pyobject(py)?.into_any().unbind(),
    })
}

fn point_arg(m: ManifoldSpec, value: &Bound<'_, PyAny>) -> PyResult<Point> {
    match m {
        ManifoldSpec::SpecialOrthogonal(_) => {
            let rows: Vec<Vec<f64>> = value.extract()?;
            m.point(to_matrix(&rows)?).map_err(py_err)
        }
        _ => {
            let coords: Vec<f64> = value.extract()?;
            m.point_from_slice(&coords).map_err(py_err)
        }
    }
}

/// A sampled path: `times` and one point per time.
#[pyclass(name = "Path", module = "brownian_manifold", frozen)]
struct PyPath {
    inner: Path,
}

#[pymethods]
impl PyPath {
    #[getter]
    fn manifold(&self) -> String {
        self.inner.manifold().to_string()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times().to_vec()
    }

    /// Points as flat ambient coordinates (column-major for matrices).
    #[getter]
    fn coords(&self) -> Vec<Vec<f64>> {
        self.inner.points().iter().map(|p| p.coords().to_vec()).collect()
    }

    fn point(&self, py: Python<'_>, k: usize) -> PyResult<Py<PyAny>> {
        let p = self
            .inner
            .points()
            .get(k)
            .ok_or_else(|| PyValueError::new_err(format!("index {k} out of range")))?;
        point_value(py, self.inner.manifold(), p)
    }

    fn max_membership_defect(&self) -> f64 {
        self.inner.max_membership_defect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Path(manifold='{}', len={})", self.inner.manifold(), self.inner.len())
    }
}

/// Geometry of one of the supported manifolds, e.g. `Manifold("sphere:3")`.
#[pyclass(name = "Manifold", module = "brownian_manifold", frozen)]
struct PyManifold {
    spec: ManifoldSpec,
}

#[pymethods]
impl PyManifold {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(PyManifold { spec: parse_manifold(spec)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.spec.manifold_dim()
    }

    #[getter]
    fn ambient_dim(&self) -> usize {
        self.spec.ambient_dim()
    }

    fn base_point(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        point_value(py, self.spec, &self.spec.base_point())
    }

    fn membership_defect(&self, value: &Bound<'_, PyAny>) -> PyResult<f64> {
        let m = match self.spec {
            ManifoldSpec::SpecialOrthogonal(_) => to_matrix(&value.extract::<Vec<Vec<f64>>>()?)?,
            _ => {
                let v: Vec<f64> = value.extract()?;
                DMatrix::from_column_slice(v.len(), 1, &v)
            }
        };
        if m.shape() != self.spec.ambient_shape() {
            return Err(PyValueError::new_err("shape does not match the manifold"));
        }
        Ok(self.spec.membership_defect(&m))
    }

    fn exp(&self, py: Python<'_>, p: &Bound<'_, PyAny>, v: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let p = point_arg(self.spec, p)?;
        let raw = match self.spec {
            ManifoldSpec::SpecialOrthogonal(_) => to_matrix(&v.extract::<Vec<Vec<f64>>>()?)?,
            _ => {
                let v: Vec<f64> = v.extract()?;
                DMatrix::from_column_slice(v.len(), 1, &v)
            }
        };
        let v = self.spec.tangent(&p, raw).map_err(py_err)?;
        let q = self.spec.exp_map(&p, &v).map_err(py_err)?;
        point_value(py, self.spec, &q)
    }

    fn log(&self, py: Python<'_>, p: &Bound<'_, PyAny>, q: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let p = point_arg(self.spec, p)?;
        let q = point_arg(self.spec, q)?;
        let v = self.spec.log_map(&p, &q).map_err(py_err)?;
        Ok(match self.spec {
            ManifoldSpec::SpecialOrthogonal(_) => to_rows(v.matrix()).into_pyobject(py)?.into_any().unbind(),
            _ => v.matrix().iter().copied().collect::<Vec<_>>().into_pyobject(py)?.into_any().unbind(),
        })
    }

    fn __repr__(&self) -> String {
        format!("Manifold('{}')", self.spec)
    }
}

/// Brownian motion paths on `manifold`, started at its base point unless
/// `start` is given. Path `i` uses random stream `(seed, i)`.
#[pyfunction]
#[pyo3(signature = (manifold, horizon = 1.0, dt = 1e-3, paths = 1, seed = 0, start = None))]
fn simulate_bm(
    manifold: &str,
    horizon: f64,
    dt: f64,
    paths: usize,
    seed: u64,
    start: Option<&Bound<'_, PyAny>>,
) -> PyResult<Vec<PyPath>> {
    let m = parse_manifold(manifold)?;
    let cfg = SimConfig::new(horizon, dt, paths, seed).map_err(py_err)?;
    let p0 = match start {
        Some(v) => point_arg(m, v)?,
        None => m.base_point(),
    };
    let out: Vec<Path> = match m {
        ManifoldSpec::Euclidean(d) if start.is_none() => {
            simulate_ensemble(&cfg, |mut s| simulate_bm_euclidean(d, &cfg, &mut s))
        }
        _ => simulate_ensemble(&cfg, |mut s| simulate_bm_manifold(m, &p0, &cfg, &mut s))
            .into_iter()
            .collect::<Result<_, _>>()
            .map_err(py_err)?,
    };
    Ok(out.into_iter().map(|inner| PyPath { inner }).collect())
}

/// Rolls a planar path (coordinates in ℝⁿ⁻¹) onto `Sphere(n)` starting at the
/// north pole.
#[pyfunction]
#[pyo3(signature = (times, coords, n = 3))]
fn develop_onto_sphere(times: Vec<f64>, coords: Vec<Vec<f64>>, n: usize) -> PyResult<PyPath> {
    let frame = FrameAtPoint::north_pole(n).map_err(py_err)?;
    let plane = Path::euclidean(times, coords).map_err(py_err)?;
    let inner = develop(&frame, &plane).map_err(py_err)?;
    Ok(PyPath { inner })
}

/// Inverse of [`develop_onto_sphere`] for a sphere path; the frame at the
/// start is the one built by the library for that point.
#[pyfunction]
fn antidevelop_from_sphere(path: &PyPath) -> PyResult<PyPath> {
    let frame = FrameAtPoint::sphere_at(&path.inner.points()[0]).map_err(py_err)?;
    let inner = antidevelop(&path.inner, &frame).map_err(py_err)?;
    Ok(PyPath { inner })
}

/// Brownian motion sampled at the points of a uniform partition of `[0, T]`.
#[pyfunction]
#[pyo3(signature = (horizon, n, seed = 0))]
fn brownian_on_grid(horizon: f64, n: usize, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let partition = Partition::uniform(horizon, n).map_err(py_err)?;
    let b = brownian_on_partition(&partition, &mut GaussianStream::new(seed, 0));
    Ok((partition.points().to_vec(), b))
}

/// Left-point sum `Σ x(tᵢ)(y(tᵢ₊₁) − y(tᵢ))`.
#[pyfunction]
fn ito(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    ito_sum(&x, &y).map_err(py_err)
}

/// Averaged-endpoint sum `Σ ½(x(tᵢ) + x(tᵢ₊₁))(y(tᵢ₊₁) − y(tᵢ))`.
#[pyfunction]
fn stratonovich(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    stratonovich_sum(&x, &y).map_err(py_err)
}

#[pyfunction(name = "quadratic_variation")]
fn qv(y: Vec<f64>) -> f64 {
    quadratic_variation(&y)
}

/// Matrix exponential of a square matrix.
#[pyfunction]
fn expm(a: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let a = to_matrix(&a)?;
    if !a.is_square() {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(to_rows(&matrix_exp(&a)))
}

/// The basis `A_1..A_d` of so(n) used for covariance coordinates.
#[pyfunction]
fn so_basis_matrices(n: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let basis = so_basis(n).map_err(py_err)?;
    Ok(basis.matrices().iter().map(to_rows).collect())
}

/// `m` draws from the Brownian distribution on SO(n) with location `g` and
/// covariance `c` (d × d in the so(n) basis); draw `i` uses stream `(seed, i)`.
#[pyfunction]
#[pyo3(signature = (g, c, m, delta = 1e-3, seed = 0))]
fn sample_brownian(
    g: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    m: usize,
    delta: f64,
    seed: u64,
) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let params = BrownianDistParams::new(to_matrix(&g)?, to_matrix(&c)?).map_err(py_err)?;
    let samples = sample_brownian_dist_many(&params, delta, m, seed).map_err(py_err)?;
    Ok(samples.iter().map(|p| to_rows(p.matrix())).collect())
}

/// Elementwise sample mean of a list of square matrices.
#[pyfunction]
fn sample_mean(samples: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
    let mats = samples.iter().map(|s| to_matrix(s)).collect::<PyResult<Vec<_>>>()?;
    Ok(to_rows(&extrinsic_mean(&mats).map_err(py_err)?))
}

/// Moment estimates of `(g, C)` from SO(n) samples, returned as a dict.
/// `structure` is one of `"full"`, `"diagonal"`, `"z-only"`; `location` is
/// `"polar"` or `"qr"`.
#[pyfunction]
#[pyo3(signature = (samples, structure = None, location = "polar"))]
fn estimate<'py>(
    py: Python<'py>,
    samples: Vec<Vec<Vec<f64>>>,
    structure: Option<&str>,
    location: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let mats = samples.iter().map(|s| to_matrix(s)).collect::<PyResult<Vec<_>>>()?;
    let n = mats.first().map_or(0, DMatrix::nrows);
    let group = ManifoldSpec::SpecialOrthogonal(n);
    group.validate().map_err(py_err)?;
    let points = mats.into_iter().map(|m| group.point(m)).collect::<Result<Vec<_>, _>>().map_err(py_err)?;
    let structure = match structure {
        Some("full") => CovarianceStructure::FullC,
        Some("diagonal") => CovarianceStructure::DiagonalC,
        Some("z-only") => CovarianceStructure::ZOnly,
        None if n <= 3 => CovarianceStructure::FullC,
        None => CovarianceStructure::ZOnly,
        Some(other) => return Err(PyValueError::new_err(format!("unknown structure '{other}'"))),
    };
    let location = match location {
        "polar" => LocationMethod::Polar,
        "qr" => LocationMethod::Qr,
        other => return Err(PyValueError::new_err(format!("unknown location method '{other}'"))),
    };
    let report = estimate_son_with(&points, n, structure, location).map_err(py_err)?;
    let text = report.to_json().to_string();
    py.import("json")?.call_method1("loads", (text,))
}

/// Partial sums of the alternating harmonic series: `mode` is `"natural"`,
/// `"target"` (needs `target`) or `"random"` (needs `seed`; returns the
/// natural and the 2:1-interleaved traces). Each trace is a dict with
/// `label`, `final_sum` and the recorded `(k, partial_sum)` pairs.
#[pyfunction]
#[pyo3(signature = (mode, n, target = None, seed = 0, every = 1000))]
fn series<'py>(
    py: Python<'py>,
    mode: &str,
    n: usize,
    target: Option<f64>,
    seed: u64,
    every: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mode = match (mode, target) {
        ("natural", _) => RearrangementMode::Natural,
        ("target", Some(t)) => RearrangementMode::Target(t),
        ("target", None) => return Err(PyValueError::new_err("mode 'target' needs target=")),
        ("random", _) => RearrangementMode::RandomSigns {
            seed,
            permutation: Permutation::BlockInterleave { odd: 2, even: 1 },
        },
        (other, _) => return Err(PyValueError::new_err(format!("unknown mode '{other}'"))),
    };
    rearrangement_experiment(mode, n, every)
        .into_iter()
        .map(|t| {
            let d = PyDict::new(py);
            d.set_item("label", &t.label)?;
            d.set_item("final_sum", t.final_sum)?;
            d.set_item("trace", &t.samples)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn brownian_manifold(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyManifold>()?;
    m.add_class::<PyPath>()?;
    m.add("DomainError", m.py().get_type::<DomainError>())?;
    m.add("DegenerateError", m.py().get_type::<DegenerateError>())?;
    m.add("DivergedError", m.py().get_type::<DivergedError>())?;
    m.add("UnsupportedError", m.py().get_type::<UnsupportedError>())?;
    m.add_function(wrap_pyfunction!(simulate_bm, m)?)?;
    m.add_function(wrap_pyfunction!(develop_onto_sphere, m)?)?;
    m.add_function(wrap_pyfunction!(antidevelop_from_sphere, m)?)?;
    m.add_function(wrap_pyfunction!(brownian_on_grid, m)?)?;
    m.add_function(wrap_pyfunction!(ito, m)?)?;
    m.add_function(wrap_pyfunction!(stratonovich, m)?)?;
    m.add_function(wrap_pyfunction!(qv, m)?)?;
    m.add_function(wrap_pyfunction!(expm, m)?)?;
    m.add_function(wrap_pyfunction!(so_basis_matrices, m)?)?;
    m.add_function(wrap_pyfunction!(sample_brownian, m)?)?;
    m.add_function(wrap_pyfunction!(sample_mean, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(series, m)?)?;
    Ok(())
}
