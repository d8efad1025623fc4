//! Python bindings: load networks and platforms, size the design space, run
//! an optimiser and inspect or export the resulting design.

use std::path::Path;

use foldmap::backends::{export_design, load_design, parse_export_document, BackendKind};
use foldmap::cli::{build_report, optimise as run_optimiser, ObjectiveKind, OptimiserKind, RunConfig};
use foldmap::evaluation::{design_space_size as space_size, is_feasible, Objective};
use foldmap::hdgraph::{build_hdgraph, DesignPoint, HdGraph};
use foldmap::network::{parse_network, serialize_network, NetworkModel};
use num_bigint::BigUint;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn backend_kind(name: &str) -> PyResult<BackendKind> {
    name.parse().map_err(value_err)
}

fn objective(name: &str, batch: u64) -> PyResult<(ObjectiveKind, Objective)> {
    match name {
        "latency" => Ok((ObjectiveKind::Latency, Objective::Latency)),
        "throughput" if batch > 0 => Ok((ObjectiveKind::Throughput, Objective::Throughput { batch })),
        "throughput" => Err(PyValueError::new_err("batch size must be at least 1")),
        other => Err(PyValueError::new_err(format!("unknown objective {other:?}"))),
    }
}

fn graph(network: &Network, backend: &str) -> PyResult<HdGraph> {
    build_hdgraph(&network.inner, backend_kind(backend)?.descriptor()).map_err(value_err)
}

/// A validated chain of CNN layers.
#[pyclass(module = "foldmap_py")]
struct Network {
    inner: NetworkModel,
}

#[pymethods]
impl Network {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        parse_network(text).map(|inner| Network { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        foldmap::cli::load_model(Path::new(path)).map(|inner| Network { inner }).map_err(value_err)
    }

    fn to_json(&self) -> String {
        serialize_network(&self.inner)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn layer_names(&self) -> Vec<String> {
        self.inner.layers.iter().map(|l| l.name.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Network({:?}, {} layers)", self.inner.name, self.inner.len())
    }
}

/// Device resources, memory bandwidth, reconfiguration time and clock.
#[pyclass(module = "foldmap_py")]
struct Platform {
    inner: foldmap::Platform,
}

#[pymethods]
impl Platform {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        foldmap::Platform::parse(text, "<string>").map(|inner| Platform { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        foldmap::cli::load_platform(Path::new(path)).map(|inner| Platform { inner }).map_err(value_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn reconfig_time_s(&self) -> f64 {
        self.inner.reconfig_time_s
    }

    fn __repr__(&self) -> String {
        format!("Platform({:?})", self.inner.name)
    }
}

/// An optimised design: cut set, per-layer foldings and the run report.
#[pyclass(module = "foldmap_py")]
struct Design {
    point: DesignPoint,
    model: NetworkModel,
    #[pyo3(get)]
    objective_value: f64,
    #[pyo3(get)]
    evaluations: u64,
    report: String,
}

#[pymethods]
impl Design {
    #[getter]
    fn cuts(&self) -> Vec<usize> {
        self.point.cutset.edges().to_vec()
    }

    /// (s_in, s_out, k) per layer.
    #[getter]
    fn foldings(&self) -> Vec<(u32, u32, u32)> {
        self.point.foldings().iter().map(|f| (f.s_in, f.s_out, f.k)).collect()
    }

    /// The full run report as JSON.
    fn report_json(&self) -> String {
        self.report.clone()
    }

    /// The backend-ready design document as JSON.
    fn export_json(&self, platform: &Platform) -> PyResult<String> {
        let doc = export_design(&self.point, &platform.inner).map_err(value_err)?;
        serde_json::to_string_pretty(&doc).map_err(value_err)
    }

    #[pyo3(signature = (platform, objective = "latency", batch_size = 256))]
    fn evaluate(&self, platform: &Platform, objective: &str, batch_size: u64) -> PyResult<f64> {
        let (_, obj) = self::objective(objective, batch_size)?;
        Ok(obj.value(&self.point, &platform.inner))
    }

    fn is_feasible(&self, platform: &Platform) -> bool {
        is_feasible(&self.point, &platform.inner)
    }

    /// Rebuild a design from an exported document for the given network.
    #[staticmethod]
    fn from_export(text: &str, network: &Network) -> PyResult<Design> {
        let doc = parse_export_document(text).map_err(value_err)?;
        let point = load_design(&doc, &network.inner).map_err(value_err)?;
        Ok(Design {
            point,
            model: network.inner.clone(),
            objective_value: f64::NAN,
            evaluations: 0,
            report: String::new(),
        })
    }

    fn __repr__(&self) -> String {
        format!("Design({:?}, cuts={:?}, objective={})", self.model.name, self.cuts(), self.objective_value)
    }
}

/// Number of design points (cut sets times foldings) as a Python int.
#[pyfunction]
fn design_space_size(network: &Network, backend: &str) -> PyResult<BigUint> {
    Ok(space_size(&graph(network, backend)?))
}

#[pyfunction]
#[pyo3(signature = (
    network, platform, backend, optimiser = "rule", objective = "latency",
    batch_size = 256, seed = 0, restarts = 1, jobs = None, brute_cap = None
))]
#[allow(clippy::too_many_arguments)]
fn optimise(
    py: Python<'_>,
    network: &Network,
    platform: &Platform,
    backend: &str,
    optimiser: &str,
    objective: &str,
    batch_size: u64,
    seed: u64,
    restarts: usize,
    jobs: Option<usize>,
    brute_cap: Option<u64>,
) -> PyResult<Design> {
    let g = graph(network, backend)?;
    let mut config = RunConfig::new("", "", "", backend_kind(backend)?);
    config.optimiser = match optimiser {
        "rule" => OptimiserKind::Rule,
        "annealing" => OptimiserKind::Annealing,
        "brute" => OptimiserKind::Brute,
        other => return Err(PyValueError::new_err(format!("unknown optimiser {other:?}"))),
    };
    let (kind, obj) = self::objective(objective, batch_size)?;
    config.objective = kind;
    config.batch_size = batch_size;
    config.seed = seed;
    config.restarts = restarts;
    config.jobs = jobs;
    if let Some(cap) = brute_cap {
        config.brute_cap = cap;
    }
    let plat = &platform.inner;
    let result = py
        .detach(|| run_optimiser(&g, plat, obj, &config))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let report = build_report(&network.inner, plat, &config, &g, &result)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(Design {
        point: result.best_point,
        model: network.inner.clone(),
        objective_value: result.best_objective,
        evaluations: result.evaluations,
        report: serde_json::to_string_pretty(&report).map_err(value_err)?,
    })
}

#[pymodule]
fn foldmap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<Platform>()?;
    m.add_class::<Design>()?;
    m.add_function(wrap_pyfunction!(design_space_size, m)?)?;
    m.add_function(wrap_pyfunction!(optimise, m)?)?;
    Ok(())
}
