//! Python bindings: kernels, incremental kernel regression, graph utilities
//! and the experiment runner.

use std::sync::Arc;

use coopkernel::graph::{all_pairs_distances, gen_erdos_renyi, graph_power, greedy_clique_cover, load_edge_list};
use coopkernel::harness::{self, metrics_report, ExperimentConfig, KEYS};
use coopkernel::{AugmentedContext, BackendKind, ComposedKernel, Graph, KernelSpec, RegressionState, UcbParams};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A base kernel on vectors: `linear`, `rbf:<bandwidth>` or
/// `matern:<lengthscale>:<nu>`.
#[pyclass(name = "Kernel", frozen)]
struct PyKernel {
    spec: KernelSpec,
}

#[pymethods]
impl PyKernel {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(Self {
            spec: spec.parse().map_err(err)?,
        })
    }

    #[staticmethod]
    fn linear() -> Self {
        Self { spec: KernelSpec::Linear }
    }

    #[staticmethod]
    #[pyo3(signature = (bandwidth = 1.0))]
    fn rbf(bandwidth: f64) -> PyResult<Self> {
        Ok(Self {
            spec: KernelSpec::rbf(bandwidth).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (lengthscale = 1.0, nu = 2.5))]
    fn matern(lengthscale: f64, nu: f64) -> PyResult<Self> {
        Ok(Self {
            spec: KernelSpec::matern(lengthscale, nu).map_err(err)?,
        })
    }

    fn __call__(&self, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        self.spec.eval(&a, &b).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Kernel('{}')", self.spec)
    }
}

/// Kernel ridge regression on augmented contexts `(agent, z, x)` under the
/// product kernel `K_z(z, z') K_x(x, x')`, updated one observation at a time.
#[pyclass(name = "KernelRegression")]
struct PyRegression {
    inner: RegressionState,
}

fn context(agent: usize, z: Vec<f64>, x: Vec<f64>) -> AugmentedContext {
    AugmentedContext::new(agent, Arc::from(z), Arc::from(x))
}

#[pymethods]
impl PyRegression {
    #[new]
    #[pyo3(signature = (kernel_z, kernel_x, lam = 1.0, backend = "auto"))]
    fn new(kernel_z: PyRef<'_, PyKernel>, kernel_x: PyRef<'_, PyKernel>, lam: f64, backend: &str) -> PyResult<Self> {
        let backend = match backend {
            "auto" => BackendKind::Auto,
            "dual" => BackendKind::Dual,
            "primal" => BackendKind::Primal,
            other => return Err(PyValueError::new_err(format!("unknown backend `{other}`"))),
        };
        let kernel = ComposedKernel::oracle(kernel_z.spec, kernel_x.spec);
        Ok(Self {
            inner: RegressionState::with_backend(kernel, lam, backend).map_err(err)?,
        })
    }

    fn incorporate(&mut self, agent: usize, z: Vec<f64>, x: Vec<f64>, y: f64) -> PyResult<()> {
        self.inner.incorporate(context(agent, z, x), y).map_err(err)
    }

    /// Posterior `(mean, variance)`.
    fn predict(&self, agent: usize, z: Vec<f64>, x: Vec<f64>) -> PyResult<(f64, f64)> {
        self.inner.predict(&context(agent, z, x)).map_err(err)
    }

    #[pyo3(signature = (agent, z, x, eta = 1.0))]
    fn ucb(&self, agent: usize, z: Vec<f64>, x: Vec<f64>, eta: f64) -> PyResult<f64> {
        let (m, v) = self.inner.predict(&context(agent, z, x)).map_err(err)?;
        Ok(m + self.inner.exploration_width(&UcbParams::with_eta(eta)) * v.sqrt())
    }

    /// `log det(I + K / λ)` over the stored points.
    fn log_det(&self) -> f64 {
        self.inner.log_det_regularized()
    }

    #[getter]
    fn is_primal(&self) -> bool {
        self.inner.is_primal()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// An undirected simple graph on vertices `0..n`.
#[pyclass(name = "Graph", frozen)]
struct PyGraph {
    inner: Graph,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        Ok(Self {
            inner: Graph::new(n, edges).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n, p, seed = 0))]
    fn erdos_renyi(n: usize, p: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: gen_erdos_renyi(n, p, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn complete(n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Graph::complete(n).map_err(err)?,
        })
    }

    #[staticmethod]
    fn path(n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Graph::path(n).map_err(err)?,
        })
    }

    #[staticmethod]
    fn star(n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Graph::star(n).map_err(err)?,
        })
    }

    /// Parses a whitespace separated edge list (`#` comments allowed) and
    /// keeps the largest connected component.
    #[staticmethod]
    #[pyo3(signature = (text, subsample = None))]
    fn from_edge_list(text: &str, subsample: Option<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: load_edge_list(text, subsample).map_err(err)?,
        })
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges()
    }

    fn distances(&self) -> Vec<Vec<usize>> {
        let d = all_pairs_distances(&self.inner);
        let n = self.inner.vertex_count();
        (0..n).map(|a| (0..n).map(|b| d.get(a, b)).collect()).collect()
    }

    fn diameter(&self) -> usize {
        all_pairs_distances(&self.inner).diameter()
    }

    fn power(&self, gamma: usize) -> PyResult<Self> {
        Ok(Self {
            inner: graph_power(&self.inner, gamma).map_err(err)?,
        })
    }

    /// Greedy clique cover of the `gamma`-th power graph.
    fn clique_cover(&self, gamma: usize) -> PyResult<Vec<Vec<usize>>> {
        let gp = graph_power(&self.inner, gamma).map_err(err)?;
        Ok(greedy_clique_cover(&gp).cliques().to_vec())
    }
}

/// Recognised experiment setting names.
#[pyfunction]
fn config_keys() -> Vec<&'static str> {
    KEYS.to_vec()
}

/// Runs an experiment. `settings` maps setting names (see `config_keys`)
/// to values; anything not given keeps its default. Returns a dict with
/// `policies`, `rounds`, `mean`, `std` (per-policy lists), `csv` and
/// `metrics` (a JSON string).
#[pyfunction]
#[pyo3(signature = (settings = None))]
fn run_experiment<'py>(py: Python<'py>, settings: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = ExperimentConfig::default();
    if let Some(s) = settings {
        for (k, v) in s.iter() {
            let key: String = k.extract()?;
            let value = v.str()?.to_string();
            cfg.set(&key, &value).map_err(err)?;
        }
    }
    let out = py.detach(|| harness::run_experiment(&cfg)).map_err(err)?;
    harness::write_outputs(&cfg, &out).map_err(err)?;
    let report = metrics_report(&cfg, &out).map_err(err)?;

    let result = PyDict::new(py);
    let names: Vec<&str> = out.trace.policies.iter().map(|p| p.name()).collect();
    let mean = PyDict::new(py);
    let std = PyDict::new(py);
    for (i, name) in names.iter().enumerate() {
        mean.set_item(name, out.trace.mean[i].clone())?;
        std.set_item(name, out.trace.std[i].clone())?;
    }
    result.set_item("policies", names)?;
    result.set_item("rounds", out.trace.rounds)?;
    result.set_item("mean", mean)?;
    result.set_item("std", std)?;
    result.set_item("csv", harness::csv_string(&out.trace))?;
    result.set_item("metrics", report.to_json().map_err(err)?)?;
    Ok(result)
}


#[pymodule]
fn pycoopkernel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_class::<PyRegression>()?;
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(config_keys, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
