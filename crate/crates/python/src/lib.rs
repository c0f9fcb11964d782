//! Python bindings for `pmdiff`.

use std::path::PathBuf;

use pmdiff::analysis::{self, probe_continuity};
use pmdiff::operator::{convolve_gaussian, diffusivity_field};
use pmdiff::schemes;
use pmdiff::{DiffusionError, DiffusionOperator, DiffusivityKind, GaussianKernel, Regime, Runner, SchemeKind, Spacing};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(
    pmdiff_py,
    NumericError,
    PyException,
    "Non-finite values or solver failure."
);

fn to_py(err: DiffusionError) -> PyErr {
    let msg = err.to_string();
    match err.root() {
        DiffusionError::Io(_) => PyOSError::new_err(msg),
        DiffusionError::NumericBlowup { .. } | DiffusionError::Solver { .. } => NumericError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for pmdiff::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// A 2D grid of samples with grid spacing `dx` (columns) and `dy` (rows).
#[pyclass(name = "ScalarField", module = "pmdiff_py", from_py_object)]
#[derive(Clone)]
struct PyScalarField {
    inner: pmdiff::ScalarField,
}

#[pymethods]
impl PyScalarField {
    /// Builds a field from a list of rows.
    #[new]
    #[pyo3(signature = (rows, dx = 1.0, dy = 1.0))]
    fn new(rows: Vec<Vec<f64>>, dx: f64, dy: f64) -> PyResult<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(PyValueError::new_err("rows must all have the same length"));
        }
        let values = rows.into_iter().flatten().collect();
        let inner = pmdiff::ScalarField::with_spacing(height, width, values, Spacing::new(dx, dy).py()?).py()?;
        Ok(PyScalarField { inner })
    }

    /// A 1xN field.
    #[staticmethod]
    fn from_signal(values: Vec<f64>) -> PyResult<Self> {
        Ok(pmdiff::ScalarField::from_signal(values).py()?.into())
    }

    #[staticmethod]
    fn constant(height: usize, width: usize, value: f64) -> PyResult<Self> {
        Ok(pmdiff::ScalarField::constant(height, width, value).py()?.into())
    }

    #[staticmethod]
    #[pyo3(signature = (height, width, seed, lo = 0.0, hi = 1.0))]
    fn uniform_random(height: usize, width: usize, seed: u64, lo: f64, hi: f64) -> PyResult<Self> {
        Ok(analysis::uniform_random_field(height, width, lo, hi, seed).py()?.into())
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.height(), self.inner.width())
    }

    #[getter]
    fn spacing(&self) -> (f64, f64) {
        let s = self.inner.spacing();
        (s.dx(), s.dy())
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        self.inner.get(i, j).py()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn to_rows(&self) -> Vec<Vec<f64>> {
        self.inner
            .values()
            .chunks(self.inner.width())
            .map(<[f64]>::to_vec)
            .collect()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn min(&self) -> f64 {
        self.inner.min()
    }

    fn max(&self) -> f64 {
        self.inner.max()
    }

    fn variance(&self) -> f64 {
        pmdiff::variance(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "ScalarField({}x{}, mean={:.6})",
            self.inner.height(),
            self.inner.width(),
            self.inner.mean()
        )
    }
}

impl From<pmdiff::ScalarField> for PyScalarField {
    fn from(inner: pmdiff::ScalarField) -> Self {
        PyScalarField { inner }
    }
}

#[pyclass(name = "DiffusivityModel", module = "pmdiff_py", from_py_object)]
#[derive(Clone)]
struct PyDiffusivityModel {
    inner: pmdiff::DiffusivityModel,
}

#[pymethods]
impl PyDiffusivityModel {
    /// `kind` is `"rational"` or `"exponential"`.
    #[new]
    #[pyo3(signature = (kind = "rational", lam = 1.0))]
    fn new(kind: &str, lam: f64) -> PyResult<Self> {
        let kind: DiffusivityKind = kind.parse().py()?;
        Ok(PyDiffusivityModel {
            inner: pmdiff::DiffusivityModel::new(kind, lam).py()?,
        })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda()
    }

    fn evaluate(&self, s_sq: f64) -> PyResult<f64> {
        self.inner.evaluate(s_sq).py()
    }

    fn flux(&self, s: f64) -> PyResult<f64> {
        self.inner.flux(s).py()
    }

    fn flux_derivative(&self, s: f64) -> PyResult<f64> {
        self.inner.flux_derivative(s).py()
    }

    /// `"forward"`, `"backward"` or `"critical"`.
    fn regime(&self, s: f64) -> PyResult<&'static str> {
        Ok(match self.inner.regime(s).py()? {
            Regime::Forward => "forward",
            Regime::Backward => "backward",
            Regime::Critical => "critical",
        })
    }

    fn __repr__(&self) -> String {
        format!("DiffusivityModel({:?}, lam={})", self.kind(), self.inner.lambda())
    }
}

#[pyclass(name = "SchemeConfig", module = "pmdiff_py", from_py_object)]
#[derive(Clone)]
struct PySchemeConfig {
    inner: pmdiff::SchemeConfig,
}

#[pymethods]
impl PySchemeConfig {
    #[new]
    #[pyo3(signature = (scheme = "explicit", tau = 0.2, sigma = 1.0, allow_unstable = false, solver_tol = 1e-10, solver_max_iter = None))]
    fn new(
        scheme: &str,
        tau: f64,
        sigma: f64,
        allow_unstable: bool,
        solver_tol: f64,
        solver_max_iter: Option<usize>,
    ) -> PyResult<Self> {
        let inner = pmdiff::SchemeConfig {
            kind: scheme.parse().py()?,
            tau,
            sigma,
            solver_tol,
            solver_max_iter,
            enforce_stability_bound: !allow_unstable,
        };
        inner.validate().py()?;
        Ok(PySchemeConfig { inner })
    }

    #[getter]
    fn scheme(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    fn __repr__(&self) -> String {
        format!(
            "SchemeConfig({:?}, tau={}, sigma={})",
            self.inner.kind.name(),
            self.inner.tau,
            self.inner.sigma
        )
    }
}

fn record_dict<'py>(py: Python<'py>, r: &pmdiff::MetricsRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iter", r.iteration)?;
    d.set_item("mean", r.mean)?;
    d.set_item("variance", r.variance)?;
    d.set_item("min", r.min)?;
    d.set_item("max", r.max)?;
    d.set_item("l1_ref", r.l1_ref)?;
    Ok(d)
}

/// Largest stable explicit time step for the given spacing.
#[pyfunction]
#[pyo3(signature = (dx = 1.0, dy = 1.0))]
fn stability_bound(dx: f64, dy: f64) -> f64 {
    pmdiff::stability_bound(dx, dy)
}

/// One step of the configured scheme.
#[pyfunction]
fn step(field: &PyScalarField, model: &PyDiffusivityModel, config: &PySchemeConfig) -> PyResult<PyScalarField> {
    Ok(schemes::step(&field.inner, &model.inner, &config.inner).py()?.into())
}

/// Runs `iters` steps. Returns a dict with `field`, `metrics` (one dict per
/// step), `snapshots` (list of `(iter, field)`) and `iterations`.
#[pyfunction]
#[pyo3(signature = (field, model, config, iters, snapshots = None, reference = None))]
fn run<'py>(
    py: Python<'py>,
    field: &PyScalarField,
    model: &PyDiffusivityModel,
    config: &PySchemeConfig,
    iters: usize,
    snapshots: Option<Vec<usize>>,
    reference: Option<PyScalarField>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut runner = Runner::new(model.inner, config.inner.clone()).with_snapshots(snapshots.unwrap_or_default());
    if let Some(r) = &reference {
        runner = runner.with_reference(&r.inner);
    }
    let u0 = field.inner.clone();
    let out = py.detach(|| runner.run(&u0, iters)).py()?;
    let d = PyDict::new(py);
    d.set_item("field", PyScalarField::from(out.field))?;
    let metrics = out
        .log
        .records()
        .iter()
        .map(|r| record_dict(py, r))
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("metrics", metrics)?;
    let snaps: Vec<(usize, PyScalarField)> = out.snapshots.into_iter().map(|(n, f)| (n, f.into())).collect();
    d.set_item("snapshots", snaps)?;
    d.set_item("iterations", out.iterations)?;
    Ok(d)
}

/// The heat equation solution at time `t` by Gaussian convolution.
#[pyfunction]
fn heat_closed_form(field: &PyScalarField, t: f64) -> PyResult<PyScalarField> {
    Ok(schemes::heat_closed_form(&field.inner, t).py()?.into())
}

#[pyfunction]
fn add_gaussian_noise(field: &PyScalarField, snr: f64, seed: u64) -> PyResult<PyScalarField> {
    Ok(pmdiff::add_gaussian_noise(&field.inner, snr, seed).py()?.into())
}

#[pyfunction]
fn l1_distance(a: &PyScalarField, b: &PyScalarField) -> PyResult<f64> {
    pmdiff::l1_distance(&a.inner, &b.inner).py()
}

#[pyfunction]
fn variance(field: &PyScalarField) -> f64 {
    pmdiff::variance(&field.inner)
}

fn operator_for(
    kind: SchemeKind,
    field: &pmdiff::ScalarField,
    model: &pmdiff::DiffusivityModel,
    sigma: f64,
) -> pmdiff::Result<DiffusionOperator> {
    match kind {
        SchemeKind::Explicit | SchemeKind::SemiImplicit => DiffusionOperator::assemble(field, model),
        SchemeKind::PmOriginal => DiffusionOperator::assemble_half_point(field, model),
        SchemeKind::Regularized => {
            let smoothed = convolve_gaussian(field, &GaussianKernel::new(sigma)?);
            Ok(DiffusionOperator::from_diffusivity(&diffusivity_field(
                &smoothed, model,
            )?))
        }
        SchemeKind::Gaussian => Ok(DiffusionOperator::laplacian(field)),
    }
}

/// Checks the operator of `scheme` at `field`. Returns the measured values
/// and a `pass` flag per property.
#[pyfunction]
#[pyo3(signature = (field, model, scheme = "explicit", sigma = 1.0, seed = 0))]
fn check_operator<'py>(
    py: Python<'py>,
    field: &PyScalarField,
    model: &PyDiffusivityModel,
    scheme: &str,
    sigma: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let kind: SchemeKind = scheme.parse().py()?;
    let op = operator_for(kind, &field.inner, &model.inner, sigma).py()?;
    let p1 = probe_continuity(&field.inner, seed, |u| operator_for(kind, u, &model.inner, sigma)).py()?;
    let r = pmdiff::verify_operator_properties(&op);
    let d = PyDict::new(py);
    d.set_item("p1", p1.pass())?;
    d.set_item("p2", r.symmetric())?;
    d.set_item("p3", r.zero_row_sums())?;
    d.set_item("p4", r.nonnegative_off_diagonals())?;
    d.set_item("p5", r.irreducible())?;
    d.set_item("max_asymmetry", r.max_asymmetry)?;
    d.set_item("max_abs_row_sum", r.max_abs_row_sum)?;
    d.set_item("min_off_diagonal", r.min_off_diagonal)?;
    d.set_item("components", r.components)?;
    d.set_item("report", format!("{p1}{r}"))?;
    Ok(d)
}

/// Runs each config from `noisy` and stops at the first minimum of the L1
/// error to `clean`. Returns one dict per config.
#[pyfunction]
#[pyo3(signature = (clean, noisy, model, configs, max_iters = 100_000, patience = 10))]
fn denoise_experiment<'py>(
    py: Python<'py>,
    clean: &PyScalarField,
    noisy: &PyScalarField,
    model: &PyDiffusivityModel,
    configs: Vec<PySchemeConfig>,
    max_iters: usize,
    patience: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut exp = pmdiff::DenoiseExperiment::new(model.inner, max_iters);
    exp.patience = patience;
    let cfgs: Vec<pmdiff::SchemeConfig> = configs.into_iter().map(|c| c.inner).collect();
    let (c, n) = (&clean.inner, &noisy.inner);
    let results = py.detach(|| exp.run(c, n, &cfgs)).py()?;
    results
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("scheme", r.scheme.name())?;
            d.set_item("stop_iteration", r.stop_iteration)?;
            d.set_item("min_error", r.min_error)?;
            d.set_item("converged", r.converged)?;
            d.set_item("curve", r.curve)?;
            Ok(d)
        })
        .collect()
}

/// Loads a `.pgm` image (scaled to [0, 1]) or a `.csv` signal.
#[pyfunction]
fn load_field(path: PathBuf) -> PyResult<PyScalarField> {
    Ok(pmdiff::io::load_field(&path).py()?.into())
}

/// Writes a `.pgm` image (clamped to [0, 1]) or a `.csv` signal.
#[pyfunction]
fn save_field(path: PathBuf, field: &PyScalarField) -> PyResult<()> {
    pmdiff::io::save_field(&path, &field.inner).py()
}

#[pymodule]
fn pmdiff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScalarField>()?;
    m.add_class::<PyDiffusivityModel>()?;
    m.add_class::<PySchemeConfig>()?;
    m.add("NumericError", m.py().get_type::<NumericError>())?;
    m.add_function(wrap_pyfunction!(stability_bound, m)?)?;
    m.add_function(wrap_pyfunction!(step, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(heat_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(add_gaussian_noise, m)?)?;
    m.add_function(wrap_pyfunction!(l1_distance, m)?)?;
    m.add_function(wrap_pyfunction!(variance, m)?)?;
    m.add_function(wrap_pyfunction!(check_operator, m)?)?;
    m.add_function(wrap_pyfunction!(denoise_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(load_field, m)?)?;
    m.add_function(wrap_pyfunction!(save_field, m)?)?;
    Ok(())
}
