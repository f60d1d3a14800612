//! Python bindings: `import fvlab`.

use std::sync::Arc;

use fvlab_core::mesh::{MeshFunction, TensorMesh};
use fvlab_core::problem::{builtin, QuadratureRule, SolutionSpec};
use fvlab_core::solver::{solve_poisson, Method, SolveOptions, Source};
use fvlab_core::study::{self, MeshFamily, StudyConfig, VerifyConfig};
use fvlab_core::{norms, stencil, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NotConverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Mesh", module = "fvlab", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMesh {
    inner: Arc<TensorMesh>,
}

#[pymethods]
impl PyMesh {
    #[staticmethod]
    fn uniform(dim: usize, m: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(TensorMesh::uniform(dim, m).map_err(to_py)?),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (cells, perturbation=0.3, seed=0))]
    fn random(cells: Vec<usize>, perturbation: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(TensorMesh::random(&cells, perturbation, seed).map_err(to_py)?),
        })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(TensorMesh::read_file(path).map_err(to_py)?),
        })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let mesh = TensorMesh::parse_text(text)
            .map_err(|(line, msg)| PyValueError::new_err(format!("line {line}: {msg}")))?;
        Ok(Self {
            inner: Arc::new(mesh),
        })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn write(&self, path: &str) -> PyResult<()> {
        self.inner.write_file(path).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn cells(&self) -> Vec<usize> {
        self.inner.cells()
    }

    fn coords(&self, axis: usize) -> PyResult<Vec<f64>> {
        self.check_axis(axis)?;
        Ok(self.inner.axis(axis).coords().to_vec())
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn interior_count(&self) -> usize {
        self.inner.interior_count()
    }

    #[getter]
    fn max_step(&self) -> f64 {
        self.inner.max_step()
    }

    fn quasi_uniformity_ratio(&self) -> f64 {
        self.inner.quasi_uniformity_ratio()
    }

    /// Samples `f(x)` at every node.
    fn sample(&self, f: Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
        self.inner
            .nodes()
            .map(|idx| f.call1((self.inner.point(&idx),))?.extract::<f64>())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Mesh(dim={}, cells={:?})", self.inner.dim(), self.inner.cells())
    }
}

impl PyMesh {
    fn check_axis(&self, axis: usize) -> PyResult<()> {
        if axis < self.inner.dim() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!("axis {axis} out of range")))
        }
    }

    fn function(&self, values: Vec<f64>) -> PyResult<MeshFunction> {
        MeshFunction::from_values(Arc::clone(&self.inner), values).map_err(to_py)
    }
}

fn parse_spec(solution: &str, params: Option<&Bound<'_, PyDict>>) -> PyResult<SolutionSpec> {
    let mut spec = SolutionSpec::parse(solution).map_err(to_py)?;
    if let Some(params) = params {
        for (k, v) in params.iter() {
            spec.params.insert(k.extract()?, v.extract()?);
        }
    }
    Ok(spec)
}

fn parse_method(method: &str) -> PyResult<Method> {
    method.parse().map_err(|e: Error| to_py(e))
}

/// Solves on `mesh` and returns a dict with node values and error norms.
#[pyfunction]
#[pyo3(signature = (mesh, solution="sine_product", params=None, quad_order=4, tol=1e-10, method="auto"))]
fn solve<'py>(
    py: Python<'py>,
    mesh: &PyMesh,
    solution: &str,
    params: Option<&Bound<'py, PyDict>>,
    quad_order: usize,
    tol: f64,
    method: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = parse_spec(solution, params)?;
    let sol = builtin(&spec, mesh.inner.dim()).map_err(to_py)?;
    let rule = QuadratureRule::gauss_legendre(quad_order).map_err(to_py)?;
    let mut opts = SolveOptions::default().with_tolerance(tol);
    opts.method = parse_method(method)?;
    let m = Arc::clone(&mesh.inner);
    let (uh, report, err, exact) = py
        .detach(|| -> fvlab_core::Result<_> {
            let (uh, report) = solve_poisson(&m, Source::Solution(&sol), &rule, &opts)?;
            let mut exact = MeshFunction::from_fn(Arc::clone(&m), |x| sol.u(x));
            exact.clear_boundary();
            let err = norms::norms(&exact.lin_comb(1.0, &uh, -1.0)?);
            Ok((uh, report, err, exact))
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("u", uh.into_values())?;
    out.set_item("u_exact", exact.into_values())?;
    out.set_item("iterations", report.iterations)?;
    out.set_item("relative_residual", report.relative_residual)?;
    out.set_item("symmetry_defect", report.symmetry_defect)?;
    out.set_item("method", report.method.to_string())?;
    out.set_item("l2", err.l2)?;
    out.set_item("h1_semi", err.h1_semi)?;
    out.set_item("h1h", err.h1)?;
    out.set_item("max", err.max)?;
    Ok(out)
}

/// Discrete norms of node values on `mesh`.
#[pyfunction]
fn norms_of<'py>(py: Python<'py>, mesh: &PyMesh, values: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let v = mesh.function(values)?;
    let r = norms::norms(&v);
    let out = PyDict::new(py);
    out.set_item("l2", r.l2)?;
    out.set_item("h1_semi", r.h1_semi)?;
    out.set_item("h1h", r.h1)?;
    out.set_item("max", r.max)?;
    Ok(out)
}

/// Dual `H^-1` norm by dense Cholesky.
#[pyfunction]
fn hminus1_norm(mesh: &PyMesh, values: Vec<f64>) -> PyResult<f64> {
    norms::hminus1_dense(&mesh.function(values)?).map_err(to_py)
}

/// `L^h v` (boundary entries zero).
#[pyfunction]
fn apply_lh(mesh: &PyMesh, values: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(stencil::apply_lh(&mesh.function(values)?)
        .map_err(to_py)?
        .into_values())
}

/// Transverse average along `axis`.
#[pyfunction]
fn mu_transverse(mesh: &PyMesh, values: Vec<f64>, axis: usize) -> PyResult<Vec<f64>> {
    mesh.check_axis(axis)?;
    Ok(stencil::mu_transverse(&mesh.function(values)?, axis)
        .map_err(to_py)?
        .into_values())
}

/// Refinement study; returns a list of row dicts and the abort message.
#[pyfunction]
#[pyo3(signature = (dim, levels, solution="sine_product", params=None, mesh="uniform", perturbation=0.3, seed=0, quad_order=4, tol=1e-10, csv=None, svg=None))]
#[allow(clippy::too_many_arguments)]
fn run_study<'py>(
    py: Python<'py>,
    dim: usize,
    levels: Vec<usize>,
    solution: &str,
    params: Option<&Bound<'py, PyDict>>,
    mesh: &str,
    perturbation: f64,
    seed: u64,
    quad_order: usize,
    tol: f64,
    csv: Option<&str>,
    svg: Option<&str>,
) -> PyResult<(Vec<Bound<'py, PyDict>>, Option<String>)> {
    let family = match mesh {
        "uniform" => MeshFamily::Uniform,
        "random" => MeshFamily::Random { perturbation, seed },
        other => return Err(PyValueError::new_err(format!("unknown mesh family `{other}`"))),
    };
    let mut config = StudyConfig::new(dim, parse_spec(solution, params)?, family, levels);
    config.quad_order = quad_order;
    config.solve = SolveOptions::default().with_tolerance(tol);
    let result = py.detach(|| study::run_study(&config)).map_err(to_py)?;
    if let Some(path) = csv {
        study::emit_csv(&result.rows, path).map_err(to_py)?;
    }
    if let Some(path) = svg {
        study::emit_svg(&result.rows, path).map_err(to_py)?;
    }
    let rows = result
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("M", r.m)?;
            d.set_item("h", r.h)?;
            d.set_item("l2", r.l2)?;
            d.set_item("l2_rel", r.l2_rel)?;
            d.set_item("h1_semi", r.h1_semi)?;
            d.set_item("h1h", r.h1h)?;
            d.set_item("max", r.max)?;
            d.set_item("ord_l2", r.ord_l2)?;
            d.set_item("ord_h1h", r.ord_h1h)?;
            d.set_item("ord_max", r.ord_max)?;
            d.set_item("iterations", r.iterations)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((rows, result.aborted))
}

/// Randomized stability checks; returns `{name: (worst, bound, pass)}`.
#[pyfunction]
#[pyo3(signature = (dim, trials, m_min=3, m_max=8, seed=0))]
fn verify<'py>(
    py: Python<'py>,
    dim: usize,
    trials: usize,
    m_min: usize,
    m_max: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let config = VerifyConfig::new(dim, trials, m_min, m_max, seed);
    let report = py.detach(|| study::verify_suite(&config)).map_err(to_py)?;
    let out = PyDict::new(py);
    for c in &report.checks {
        out.set_item(&c.name, (c.worst_ratio, c.constant, c.pass))?;
    }
    Ok(out)
}

#[pymodule]
fn fvlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(norms_of, m)?)?;
    m.add_function(wrap_pyfunction!(hminus1_norm, m)?)?;
    m.add_function(wrap_pyfunction!(apply_lh, m)?)?;
    m.add_function(wrap_pyfunction!(mu_transverse, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
