//! Python bindings: kernels, weight laws, the transfer-matrix field, and the
//! phase criteria. Structured results come back as plain dicts.

use polymerlab::config::RunConfig;
use polymerlab::criteria::{self, ClassifyOptions};
use polymerlab::disorder::{Environment, WeightModel};
use polymerlab::engine::{EngineError, FieldOptions, PolymerField, Precision, Support};
use polymerlab::free_energy;
use polymerlab::kernels::{self, StepKernel};
use polymerlab::run;
use pyo3::exceptions::{PyMemoryError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn engine_err(e: EngineError) -> PyErr {
    match e {
        EngineError::WindowOverflow { .. } => PyMemoryError::new_err(e.to_string()),
        e => value_err(e),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Step distribution of the underlying walk.
#[pyclass(name = "Kernel", module = "polymerlab_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyKernel(StepKernel);

#[pymethods]
impl PyKernel {
    #[staticmethod]
    fn simple(d: usize) -> Self {
        PyKernel(StepKernel::simple(d))
    }

    #[staticmethod]
    fn discrete_gaussian(d: usize) -> PyResult<Self> {
        StepKernel::discrete_gaussian(d).map(PyKernel).map_err(value_err)
    }

    /// `table` is a list of `(step, probability)` pairs.
    #[staticmethod]
    fn from_table(d: usize, table: Vec<(Vec<i64>, f64)>) -> PyResult<Self> {
        StepKernel::from_table(d, table).map(PyKernel).map_err(value_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn steps(&self) -> Vec<Vec<i64>> {
        self.0.steps().map(<[i64]>::to_vec).collect()
    }

    fn probs(&self) -> Vec<f64> {
        self.0.probs().to_vec()
    }

    fn log_mgf(&self, t: Vec<f64>) -> f64 {
        self.0.log_mgf(&t)
    }

    /// Mean vector and row-major covariance of one step.
    fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        self.0.moments()
    }

    fn entropy(&self) -> f64 {
        kernels::shannon_entropy(&self.0)
    }

    fn tilt(&self, beta: f64, h: Vec<f64>) -> PyResult<Self> {
        kernels::tilt(&self.0, beta, &h)
            .map(|q| PyKernel(q.kernel().clone()))
            .map_err(value_err)
    }

    fn difference_walk(&self) -> Self {
        PyKernel(kernels::difference_walk(&self.0))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Kernel(d={}, steps={})", self.0.dim(), self.0.len())
    }
}

/// Law of a single site weight.
#[pyclass(name = "Weights", module = "polymerlab_py", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyWeights(WeightModel);

#[pymethods]
impl PyWeights {
    #[staticmethod]
    fn uniform() -> Self {
        PyWeights(WeightModel::Uniform01)
    }

    #[staticmethod]
    #[pyo3(signature = (mean = 0.0, stdev = 1.0))]
    fn gaussian(mean: f64, stdev: f64) -> PyResult<Self> {
        checked(WeightModel::Gaussian { mean, stdev })
    }

    #[staticmethod]
    fn bernoulli(p_success: f64) -> PyResult<Self> {
        checked(WeightModel::Bernoulli { p_success })
    }

    #[staticmethod]
    fn point_mass(value: f64) -> PyResult<Self> {
        checked(WeightModel::PointMass(value))
    }

    fn log_mgf(&self, beta: f64) -> f64 {
        self.0.log_mgf(beta)
    }

    fn second_moment_ratio(&self, beta: f64) -> f64 {
        self.0.second_moment_ratio(beta)
    }

    fn relative_entropy(&self, beta: f64) -> f64 {
        self.0.relative_entropy(beta)
    }

    /// Weight at time `t`, site `x` of environment `(seed, sample)`.
    fn site_weight(&self, seed: u64, sample: u64, t: i64, x: Vec<i64>) -> PyResult<f64> {
        Environment::new(seed, sample, self.0)
            .sample_weight(t, &x)
            .map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Weights({:?})", self.0)
    }
}

fn checked(m: WeightModel) -> PyResult<PyWeights> {
    m.validate().map_err(value_err)?;
    Ok(PyWeights(m))
}

fn field_options(single: bool, representable: bool) -> FieldOptions {
    FieldOptions {
        precision: if single { Precision::Single } else { Precision::Double },
        support: if representable {
            Support::Representable
        } else {
            Support::Exact
        },
        ..FieldOptions::default()
    }
}

/// Point-to-point partition functions of one environment, advanced in time.
#[pyclass(name = "Polymer", module = "polymerlab_py")]
struct PyPolymer(PolymerField);

#[pymethods]
impl PyPolymer {
    /// `weights = None` runs the free walk.
    #[new]
    #[pyo3(signature = (kernel, beta, weights = None, seed = 0, sample = 0, h = None, single = false, representable = false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kernel: &PyKernel,
        beta: f64,
        weights: Option<PyWeights>,
        seed: u64,
        sample: u64,
        h: Option<Vec<f64>>,
        single: bool,
        representable: bool,
    ) -> PyResult<Self> {
        let env = weights.map(|w| Environment::new(seed, sample, w.0));
        let opts = field_options(single, representable);
        let f = match h {
            Some(h) => {
                let q = kernels::tilt(&kernel.0, beta, &h).map_err(value_err)?;
                PolymerField::with_tilted(&q, beta, env, opts)
            }
            None => PolymerField::new(&kernel.0, beta, env, opts),
        };
        f.map(PyPolymer).map_err(engine_err)
    }

    fn step(&mut self) -> PyResult<()> {
        self.0.step().map_err(engine_err)
    }

    fn advance_to(&mut self, n: u64) -> PyResult<()> {
        self.0.advance_to(n).map_err(engine_err)
    }

    #[getter]
    fn n(&self) -> u64 {
        self.0.time()
    }

    fn log_partition(&self) -> f64 {
        self.0.log_partition()
    }

    fn normalized_martingale(&self) -> f64 {
        self.0.normalized_martingale()
    }

    fn log_z_at(&self, x: Vec<i64>) -> PyResult<f64> {
        self.0.log_z_at(&x).map_err(engine_err)
    }

    /// Endpoint law as `(sites, probabilities)`.
    fn histogram(&self) -> (Vec<Vec<i64>>, Vec<f64>) {
        self.0.histogram().into_iter().unzip()
    }

    fn endpoint(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.endpoint())
    }

    fn j_fold(&self) -> Option<f64> {
        self.0.j_fold()
    }
}

#[pyfunction]
#[pyo3(signature = (weights, kernel, beta, h, return_terms = criteria::DEFAULT_RETURN_TERMS))]
fn classify(
    py: Python<'_>,
    weights: PyWeights,
    kernel: &PyKernel,
    beta: f64,
    h: Vec<f64>,
    return_terms: u64,
) -> PyResult<Py<PyAny>> {
    let opts = ClassifyOptions {
        return_terms,
        ..ClassifyOptions::default()
    };
    let r = py
        .detach(|| criteria::classify(&weights.0, &kernel.0, beta, &h, &opts))
        .map_err(value_err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (weights, kernel, beta, h, n_terms = criteria::DEFAULT_RETURN_TERMS))]
fn l2_criterion(
    py: Python<'_>,
    weights: PyWeights,
    kernel: &PyKernel,
    beta: f64,
    h: Vec<f64>,
    n_terms: u64,
) -> PyResult<Py<PyAny>> {
    let r = py
        .detach(|| criteria::l2_criterion(&weights.0, &kernel.0, beta, &h, n_terms))
        .map_err(value_err)?;
    to_py(py, &r)
}

#[pyfunction]
fn strong_disorder_test(
    py: Python<'_>,
    weights: PyWeights,
    kernel: &PyKernel,
    beta: f64,
    h: Vec<f64>,
) -> PyResult<Py<PyAny>> {
    let r = criteria::strong_disorder_test(&weights.0, &kernel.0, beta, &h).map_err(value_err)?;
    to_py(py, &r)
}

#[pyfunction]
fn fractional_moment(weights: PyWeights, kernel: &PyKernel, beta: f64, theta: f64) -> f64 {
    criteria::fractional_moment(&weights.0, &kernel.0, beta, theta)
}

#[pyfunction]
fn annealed_bound(weights: PyWeights, kernel: &PyKernel, beta: f64, h: Vec<f64>) -> f64 {
    free_energy::annealed_bound(&weights.0, &kernel.0, beta, &h)
}

#[pyfunction]
#[pyo3(signature = (weights, kernel, beta, h, n, samples, seed, representable = false))]
#[allow(clippy::too_many_arguments)]
fn estimate_gpl(
    py: Python<'_>,
    weights: PyWeights,
    kernel: &PyKernel,
    beta: f64,
    h: Vec<f64>,
    n: u64,
    samples: u64,
    seed: u64,
    representable: bool,
) -> PyResult<Py<PyAny>> {
    let opts = field_options(false, representable);
    let r = py
        .detach(|| free_energy::estimate_gpl(&weights.0, &kernel.0, beta, &h, n, samples, seed, opts))
        .map_err(value_err)?;
    to_py(py, &r)
}

/// Run a full config (the JSON accepted by the command-line tool) and
/// return its summary; files are written only when the config sets `out`.
#[pyfunction]
fn run_config(py: Python<'_>, config_json: &str) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig::from_json(config_json).map_err(value_err)?;
    let out = py.detach(|| run::run(&cfg)).map_err(|e| match e {
        run::RunError::Resource(_) => PyMemoryError::new_err(e.to_string()),
        e => value_err(e),
    })?;
    to_py(py, &out.summary)
}

#[pymodule]
fn polymerlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_class::<PyWeights>()?;
    m.add_class::<PyPolymer>()?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(l2_criterion, m)?)?;
    m.add_function(wrap_pyfunction!(strong_disorder_test, m)?)?;
    m.add_function(wrap_pyfunction!(fractional_moment, m)?)?;
    m.add_function(wrap_pyfunction!(annealed_bound, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_gpl, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
