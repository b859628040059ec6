//! Python bindings: graphs, operators, smoothness analytics, the eigensolver,
//! datasets and trial suites.

use std::path::PathBuf;

use fbgsp::data::{self, CsbmParams, DatasetFormat};
use fbgsp::eigen::eigendecompose_symmetric;
use fbgsp::model::Architecture;
use fbgsp::smoothness;
use fbgsp::train::{run_trial_suite, SuiteConfig, TrainConfig};
use fbgsp::{Matrix, OperatorKind, SparseOperator};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(fbgsp, FbgspError, PyException);

fn err(e: fbgsp::Error) -> PyErr {
    FbgspError::new_err(e.to_string())
}

fn kind(name: &str) -> PyResult<OperatorKind> {
    name.parse().map_err(|e: fbgsp::Error| PyValueError::new_err(e.to_string()))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(err)
}

/// Serializes through JSON so reports arrive as plain dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| FbgspError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Graph", module = "fbgsp", frozen)]
#[derive(Clone)]
struct PyGraph(fbgsp::Graph);

#[pymethods]
impl PyGraph {
    #[new]
    fn new(edges: Vec<(usize, usize)>, node_count: usize) -> PyResult<Self> {
        fbgsp::Graph::from_edges(&edges, node_count).map(Self).map_err(err)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.0.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.0.edge_count()
    }

    fn degrees(&self) -> Vec<usize> {
        self.0.degrees()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.0.edges()
    }

    fn neighbors(&self, i: usize) -> PyResult<Vec<usize>> {
        self.0.neighbors(i).map(<[usize]>::to_vec).map_err(err)
    }

    fn diagnose<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.diagnose())
    }

    fn __repr__(&self) -> String {
        format!("Graph(nodes={}, edges={})", self.0.node_count(), self.0.edge_count())
    }
}

#[pyclass(name = "Operator", module = "fbgsp", frozen)]
struct PyOperator(SparseOperator);

#[pymethods]
impl PyOperator {
    #[new]
    fn new(graph: &PyGraph, kind_name: &str) -> PyResult<Self> {
        SparseOperator::build(&graph.0, kind(kind_name)?).map(Self).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind().flag_name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn is_symmetric(&self) -> bool {
        self.0.is_symmetric()
    }

    fn apply(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.0.apply(&matrix(x)?).map_err(err)?.to_rows())
    }

    fn to_dense(&self) -> Vec<Vec<f64>> {
        self.0.to_dense().to_rows()
    }

    fn __repr__(&self) -> String {
        format!("Operator(kind={}, dim={})", self.0.kind().flag_name(), self.0.dim())
    }
}

#[pyclass(name = "Dataset", module = "fbgsp", frozen)]
struct PyDataset(data::Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (path, format = "auto"))]
    fn load(path: PathBuf, format: &str) -> PyResult<Self> {
        let format = match format {
            "auto" => DatasetFormat::Auto,
            "generic" => DatasetFormat::Generic,
            "webkb" => DatasetFormat::WebKb,
            other => return Err(PyValueError::new_err(format!("unknown dataset format {other:?}"))),
        };
        data::load_dataset(&path, format).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (nodes = 500, classes = 2, p_in = 0.02, p_out = 0.2, feature_dim = 32, mu = 1.0, sigma = 1.0, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn csbm(
        nodes: usize,
        classes: usize,
        p_in: f64,
        p_out: f64,
        feature_dim: usize,
        mu: f64,
        sigma: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let params = CsbmParams { nodes, classes, p_in, p_out, feature_dim, mu, sigma, seed };
        data::generate_csbm(&params).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::save_bundle(&self.0, &path).map_err(err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }

    #[getter]
    fn graph(&self) -> PyGraph {
        PyGraph(self.0.graph.clone())
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.0.features.to_rows()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels.clone()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes
    }

    fn __len__(&self) -> usize {
        self.0.node_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(name={:?}, nodes={}, edges={}, features={}, classes={})",
            self.0.name,
            self.0.node_count(),
            self.0.graph.edge_count(),
            self.0.features.cols(),
            self.0.num_classes
        )
    }
}

/// Dirichlet energy `tr(XᵀLX)` for a Laplacian operator.
#[pyfunction]
fn dirichlet_energy(op: &PyOperator, x: Vec<Vec<f64>>) -> PyResult<f64> {
    smoothness::dirichlet_energy(&op.0, &matrix(x)?).map_err(err)
}

/// Non-smooth energy fraction of `x` under a Laplacian operator.
#[pyfunction]
fn s_value(op: &PyOperator, x: Vec<Vec<f64>>) -> PyResult<f64> {
    smoothness::s_value(&op.0, &matrix(x)?).map_err(err)
}

#[pyfunction]
fn edge_homophily(graph: &PyGraph, labels: Vec<usize>) -> PyResult<f64> {
    smoothness::edge_homophily(&graph.0, &labels).map_err(err)
}

#[pyfunction]
fn node_homophily(graph: &PyGraph, labels: Vec<usize>) -> PyResult<f64> {
    smoothness::node_homophily(&graph.0, &labels).map_err(err)
}

/// Feature and label S-values plus homophily; affinity names resolve to their Laplacian.
#[pyfunction]
#[pyo3(signature = (dataset, laplacian = "sym"))]
fn smoothness_report<'py>(py: Python<'py>, dataset: &PyDataset, laplacian: &str) -> PyResult<Bound<'py, PyAny>> {
    let ds = &dataset.0;
    let lap = kind(laplacian)?.as_laplacian();
    let r = smoothness::smoothness_report(&ds.graph, &ds.features, &ds.labels, ds.num_classes, lap).map_err(err)?;
    to_py(py, &r)
}

/// Ascending eigenvalues and eigenvector columns of the symmetric form of `laplacian`.
#[pyfunction]
#[pyo3(signature = (graph, laplacian = "sym"))]
fn eigen(graph: &PyGraph, laplacian: &str) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let op = SparseOperator::build(&graph.0, kind(laplacian)?.symmetric_similar()).map_err(err)?;
    let e = eigendecompose_symmetric(&op.to_dense()).map_err(err)?;
    Ok((e.eigenvalues, e.eigenvectors.to_rows()))
}

/// Trains every model on `splits` seeded splits and returns the suite report.
#[pyfunction]
#[pyo3(signature = (
    dataset, models, hidden = vec![64], splits = 10, epochs = 500, patience = 100,
    lr = 0.01, weight_decay = 5e-4, lp = "renorm-rw", seed = 0, threads = 1
))]
#[allow(clippy::too_many_arguments)]
fn run_suite<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    models: Vec<String>,
    hidden: Vec<usize>,
    splits: usize,
    epochs: usize,
    patience: usize,
    lr: f64,
    weight_decay: f64,
    lp: &str,
    seed: u64,
    threads: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let archs = models
        .iter()
        .map(|m| m.parse::<Architecture>().map_err(|e| PyValueError::new_err(e.to_string())))
        .collect::<PyResult<Vec<_>>>()?;
    let lp_kind = kind(lp)?;
    let hp_kind = lp_kind
        .complement()
        .filter(|_| !lp_kind.is_laplacian())
        .ok_or_else(|| PyValueError::new_err(format!("{lp} is not an affinity operator")))?;
    let cfg = SuiteConfig {
        hidden,
        lp_kind,
        hp_kind,
        train: TrainConfig { lr, weight_decay, max_epochs: epochs, patience, seed, ..TrainConfig::default() },
        n_splits: splits,
        threads,
        ..SuiteConfig::default()
    };
    let ds = &dataset.0;
    let result = py.detach(|| run_trial_suite(ds, &archs, &cfg)).map_err(err)?;
    to_py(py, &result)
}

#[pymodule]
#[pyo3(name = "fbgsp")]
fn fbgsp_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FbgspError", m.py().get_type::<FbgspError>())?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(dirichlet_energy, m)?)?;
    m.add_function(wrap_pyfunction!(s_value, m)?)?;
    m.add_function(wrap_pyfunction!(edge_homophily, m)?)?;
    m.add_function(wrap_pyfunction!(node_homophily, m)?)?;
    m.add_function(wrap_pyfunction!(smoothness_report, m)?)?;
    m.add_function(wrap_pyfunction!(eigen, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
