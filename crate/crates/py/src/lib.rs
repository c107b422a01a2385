//! Python bindings: reflector geometry, sensing matrices, the ADMM solver,
//! post-processing helpers and the staged pipeline.

use std::path::PathBuf;

use cra_cli::config::{load_config, parse_config, ExperimentConfig, Stage};
use cra_cli::pipeline::{run_pipeline, Artifacts};
use cra_core::forward::SensingMatrix;
use cra_core::geometry::{build_cra_surface, build_tra_surface, ReflectorParams};
use cra_core::postproc;
use cra_core::scene::{build_roi, ReflectivityVolume, RoISpec};
use cra_core::solver::{admm_solve, AdmmConfig, RowBlock};
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py_json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "ReflectorParams", from_py_object)]
#[derive(Clone)]
struct PyReflectorParams {
    inner: ReflectorParams,
}

#[pymethods]
impl PyReflectorParams {
    #[new]
    #[pyo3(signature = (aperture_size=500.0, focal_length=500.0, offset=350.0, mean_facet_edge=16.4, max_distortion=0.8, seed=1))]
    fn new(aperture_size: f64, focal_length: f64, offset: f64, mean_facet_edge: f64, max_distortion: f64, seed: u64) -> PyResult<Self> {
        let inner = ReflectorParams { aperture_size, focal_length, offset, mean_facet_edge, max_distortion, seed };
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn aperture_size(&self) -> f64 {
        self.inner.aperture_size
    }
    #[getter]
    fn focal_length(&self) -> f64 {
        self.inner.focal_length
    }
    #[getter]
    fn max_distortion(&self) -> f64 {
        self.inner.max_distortion
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Focus of the parent paraboloid, mm.
    fn focus(&self) -> (f64, f64, f64) {
        let f = self.inner.paraboloid().focus();
        (f.x, f.y, f.z)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "Mesh")]
struct PyMesh {
    #[pyo3(get)]
    vertices: Vec<(f64, f64, f64)>,
    #[pyo3(get)]
    faces: Vec<(usize, usize, usize)>,
    #[pyo3(get)]
    distortions: Vec<f64>,
    #[pyo3(get)]
    mean_edge_length: f64,
}

/// Tessellate the reflector; `tra=True` skips the random distortion.
#[pyfunction]
#[pyo3(signature = (params, tra=false))]
fn build_mesh(params: &PyReflectorParams, tra: bool) -> PyResult<PyMesh> {
    let mesh = if tra { build_tra_surface(&params.inner) } else { build_cra_surface(&params.inner) }.map_err(value_err)?;
    Ok(PyMesh {
        vertices: mesh.vertices.iter().map(|p| (p.x, p.y, p.z)).collect(),
        faces: mesh.faces.iter().map(|f| (f[0], f[1], f[2])).collect(),
        distortions: mesh.distortions.clone(),
        mean_edge_length: mesh.mean_edge_length(),
    })
}

#[pyclass(name = "SensingMatrix")]
struct PySensingMatrix {
    inner: SensingMatrix,
}

#[pymethods]
impl PySensingMatrix {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = SensingMatrix::load(&path).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.rows, self.inner.cols)
    }

    fn row(&self, i: usize) -> PyResult<Vec<Complex64>> {
        if i >= self.inner.rows {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.row(i).to_vec())
    }

    fn apply(&self, u: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        if u.len() != self.inner.cols {
            return Err(PyValueError::new_err(format!("expected {} entries", self.inner.cols)));
        }
        Ok(self.inner.apply(&u))
    }

    /// Singular values, effective rank and condition number.
    fn spectral_diversity<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = postproc::spectral_diversity(&self.inner).map_err(value_err)?;
        to_py_json(py, &report)
    }
}

/// Minimize `1/2 ||H u - g||^2 + lambda ||u||_1` with consensus ADMM over
/// `block_count` row blocks. `h` is a list of rows. Returns
/// `(u, iterations, converged)`.
#[pyfunction]
#[pyo3(signature = (h, g, lambda_r, block_count=1, rho=1.0, max_iters=500, tol=1e-5, adaptive_rho=false))]
#[allow(clippy::too_many_arguments)]
fn admm_lasso(
    h: Vec<Vec<Complex64>>,
    g: Vec<Complex64>,
    lambda_r: f64,
    block_count: usize,
    rho: f64,
    max_iters: usize,
    tol: f64,
    adaptive_rho: bool,
) -> PyResult<(Vec<Complex64>, usize, bool)> {
    let rows = h.len();
    let cols = h.first().map_or(0, Vec::len);
    if g.len() != rows || h.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("h must be rectangular with one row per entry of g"));
    }
    let config = AdmmConfig { block_count, lambda_r, rho, max_iters, tol_primal: tol, tol_dual: tol, adaptive_rho };
    config.validate(rows).map_err(value_err)?;
    let (base, extra) = (rows / block_count, rows % block_count);
    let mut blocks = Vec::with_capacity(block_count);
    let mut first = 0;
    for b in 0..block_count {
        let n = base + usize::from(b < extra);
        let data = h[first..first + n].concat();
        blocks.push(RowBlock::new(first, n, cols, data, g[first..first + n].to_vec()).map_err(value_err)?);
        first += n;
    }
    let (state, log) = admm_solve(&blocks, &config).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((state.v, log.entries.len(), log.converged))
}

/// Cross-range box average of a volume given as a flat list in
/// `(y, z, x)`-major order with `counts = (nx, ny, nz)`.
#[pyfunction]
#[pyo3(signature = (values, counts, na, renormalize=false))]
fn cross_range_average(values: Vec<Complex64>, counts: (usize, usize, usize), na: usize, renormalize: bool) -> PyResult<Vec<Complex64>> {
    let spec = RoISpec {
        center: [0.0; 3].into(),
        extents: [counts.0 as f64, counts.1 as f64, counts.2 as f64],
        voxel: [1.0; 3],
    };
    let roi = build_roi(&spec).map_err(value_err)?;
    let vol = ReflectivityVolume::new(roi, values).map_err(value_err)?;
    let border = if renormalize { postproc::BorderMode::Renormalize } else { postproc::BorderMode::Zero };
    Ok(postproc::cross_range_average_with(&vol, na, border).map_err(value_err)?.values)
}

/// `(sigma_xz, sigma_y)` in mm.
#[pyfunction]
fn resolution_limits(lambda0_mm: f64, range_mm: f64, aperture_mm: f64, bandwidth_hz: f64) -> PyResult<(f64, f64)> {
    let r = postproc::resolution_limits(lambda0_mm, range_mm, aperture_mm, bandwidth_hz).map_err(value_err)?;
    Ok((r.sigma_xz, r.sigma_y))
}

#[pyclass(name = "Config")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_config(&path).map_err(value_err)? })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self { inner: parse_config(text).map_err(value_err)? })
    }

    #[getter]
    fn measurement_count(&self) -> usize {
        self.inner.measurement_count()
    }

    #[getter]
    fn voxel_count(&self) -> PyResult<usize> {
        Ok(self.inner.roi_grid().map_err(value_err)?.len())
    }

    fn stage_hash(&self, stage: &str) -> PyResult<String> {
        let stage = match stage {
            "geometry" => Stage::Geometry,
            "calibrate" => Stage::Calibrate,
            "simulate" => Stage::Simulate,
            "reconstruct" => Stage::Reconstruct,
            "analyze" => Stage::Analyze,
            other => return Err(PyValueError::new_err(format!("unknown stage `{other}`"))),
        };
        Ok(self.inner.stage_hash(stage))
    }

    /// Run every stage into `out_dir` and return the metrics as a dict.
    #[pyo3(signature = (out_dir, force=false))]
    fn run<'py>(&self, py: Python<'py>, out_dir: PathBuf, force: bool) -> PyResult<Bound<'py, PyAny>> {
        let metrics = py
            .detach(|| run_pipeline(&self.inner, &Artifacts::new(out_dir), force))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py_json(py, &metrics)
    }
}

#[pymodule]
fn cra_imaging(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyReflectorParams>()?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PySensingMatrix>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(build_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(admm_lasso, m)?)?;
    m.add_function(wrap_pyfunction!(cross_range_average, m)?)?;
    m.add_function(wrap_pyfunction!(resolution_limits, m)?)?;
    Ok(())
}
