//! Python bindings for the `gate_core` localization pipeline.

use gate_core::simulator::{generate_dataset, generate_scenario};
use gate_core::{
    self as core, Ablation, Constructor, Dataset, ExperimentConfig, Fingerprint, FingerprintGraph, GcnModel,
    ModelConfig, NormalizedFingerprint, Optimizer, QueryFingerprint, ScenarioSpec, Split,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_split(name: &str) -> PyResult<Split> {
    match name {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!("unknown split {other:?}"))),
    }
}

fn normalized(rss: Vec<f64>) -> PyResult<NormalizedFingerprint> {
    Ok(core::normalize(&Fingerprint::new(rss).map_err(err)?))
}

#[pyclass(name = "Scenario", module = "gate_py", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario(core::Scenario);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    #[pyo3(signature = (preset, seed=0))]
    fn generate(preset: &str, seed: u64) -> PyResult<Self> {
        let spec = ScenarioSpec::preset(preset).map_err(err)?;
        Ok(PyScenario(generate_scenario(&spec, seed).map_err(err)?))
    }

    #[getter]
    fn n_rps(&self) -> usize {
        self.0.n_rps
    }

    #[getter]
    fn n_aps(&self) -> usize {
        self.0.n_aps
    }

    fn device_ids(&self) -> Vec<String> {
        self.0.device_ids()
    }

    fn rp_positions(&self) -> Vec<(f64, f64)> {
        self.0.rp_positions.iter().map(|p| (p[0], p[1])).collect()
    }

    /// Draws `samples_per_rp` fingerprints per RP and device.
    #[pyo3(signature = (samples_per_rp, devices=None, split="train"))]
    fn dataset(&self, samples_per_rp: usize, devices: Option<Vec<String>>, split: &str) -> PyResult<PyDataset> {
        let devices = devices.unwrap_or_else(|| self.0.device_ids());
        let ds = generate_dataset(&self.0, samples_per_rp, &devices, parse_split(split)?).map_err(err)?;
        Ok(PyDataset(ds))
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }
}

#[pyclass(name = "Dataset", module = "gate_py", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset(Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (path, split="train"))]
    fn load_csv(path: &str, split: &str) -> PyResult<Self> {
        Ok(PyDataset(Dataset::load_csv(path, parse_split(split)?).map_err(err)?))
    }

    fn save_csv(&self, path: &str) -> PyResult<()> {
        self.0.save_csv(path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn n_aps(&self) -> usize {
        self.0.n_aps
    }

    #[getter]
    fn n_rps(&self) -> usize {
        self.0.n_rps
    }

    fn content_hash(&self) -> String {
        self.0.content_hash()
    }

    /// `(rp_id, device_id, rss)` per sample.
    fn rows(&self) -> Vec<(usize, String, Vec<f64>)> {
        self.0
            .samples
            .iter()
            .map(|s| (s.rp_id, s.device_id.clone(), s.fingerprint.rss().to_vec()))
            .collect()
    }

    fn truncate(&self, percent: f64, seed: u64) -> PyResult<Self> {
        Ok(PyDataset(core::simulator::truncate_fingerprints(&self.0, percent, seed).map_err(err)?))
    }
}

#[pyclass(name = "Graph", module = "gate_py", skip_from_py_object)]
#[derive(Clone)]
struct PyGraph(FingerprintGraph);

#[pymethods]
impl PyGraph {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyGraph(FingerprintGraph::load(path).map_err(err)?))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.0.n_nodes()
    }

    #[getter]
    fn k_nb(&self) -> usize {
        self.0.k_nb()
    }

    /// `(i, j, weight)` for every directed edge.
    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.0.edge_triples()
    }
}

#[pyclass(name = "Model", module = "gate_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModel(GcnModel);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel(GcnModel::load(path).map_err(err)?))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    fn count_params(&self) -> usize {
        self.0.count_params()
    }

    fn estimate_flops(&self) -> u64 {
        self.0.estimate_flops()
    }

    /// Returns `(rp_id, top3, latency_ms)` for one raw RSS vector.
    #[pyo3(signature = (graph, rss, device_id="unknown"))]
    fn infer(&self, graph: &PyGraph, rss: Vec<f64>, device_id: &str) -> PyResult<(usize, Vec<(usize, f64)>, f64)> {
        let q = QueryFingerprint { fingerprint: Fingerprint::new(rss).map_err(err)?, device_id: device_id.into() };
        let p = core::infer(&q, &graph.0, &self.0).map_err(err)?;
        Ok((p.rp_id, p.top(3), p.latency_ms()))
    }

    /// Mean localization error per device and overall, as a JSON string.
    fn evaluate(&self, graph: &PyGraph, test: &PyDataset) -> PyResult<String> {
        let r = core::evaluate(&self.0, &graph.0, &test.0).map_err(err)?.without_latency();
        serde_json::to_string(&r).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Builds the graph and trains a model; returns `(model, graph, final_loss, train_accuracy)`.
#[pyfunction]
#[pyo3(signature = (train, nb=10.0, h=50.0, epochs=1000, lr=1e-3, seed=0, ablation="full", constructor="gate", optimizer="adam"))]
#[allow(clippy::too_many_arguments)]
fn train(
    train: &PyDataset,
    nb: f64,
    h: f64,
    epochs: usize,
    lr: f64,
    seed: u64,
    ablation: &str,
    constructor: &str,
    optimizer: &str,
) -> PyResult<(PyModel, PyGraph, f64, f64)> {
    let optimizer = match optimizer {
        "adam" => Optimizer::Adam,
        "sgd" => Optimizer::Sgd,
        other => return Err(PyValueError::new_err(format!("unknown optimizer {other:?}"))),
    };
    let model = ModelConfig {
        nb_percent: nb,
        h_percent: h,
        learning_rate: lr,
        epochs,
        seed,
        ablation: ablation.parse::<Ablation>().map_err(err)?,
        optimizer,
    };
    let exp = ExperimentConfig { model, ..Default::default() };
    let constructor: Constructor = constructor.parse().map_err(err)?;
    let graph = core::harness::build_graph(&train.0, constructor, &exp).map_err(err)?;
    let (m, report) = core::train_on_graph(&train.0, &graph, &exp.model).map_err(err)?;
    let last = report.losses.last().copied().unwrap_or(f64::NAN);
    Ok((PyModel(m), PyGraph(graph), last, report.train_accuracy))
}

/// Cosine attention between two raw RSS vectors.
#[pyfunction]
fn attention_score(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("length mismatch"));
    }
    Ok(core::attention_score(&normalized(a)?, &normalized(b)?))
}

/// Mean squared difference of two raw RSS vectors after normalization.
#[pyfunction]
fn ed_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("length mismatch"));
    }
    Ok(core::ed_distance(&normalized(a)?, &normalized(b)?))
}

/// Weighted sum of normalized neighbor fingerprints.
#[pyfunction]
fn compute_msg(center: Vec<f64>, neighbors: Vec<Vec<f64>>, weights: Vec<f64>) -> PyResult<Vec<f64>> {
    if neighbors.len() != weights.len() {
        return Err(PyValueError::new_err("neighbors and weights differ in length"));
    }
    let f = normalized(center)?;
    let nbs = neighbors.into_iter().map(normalized).collect::<PyResult<Vec<_>>>()?;
    let pairs: Vec<_> = nbs.iter().zip(weights).collect();
    Ok(core::compute_msg(&f, &pairs).map_err(err)?.0)
}

/// One per-feature attention column per neighbor.
#[pyfunction]
fn compute_ahv(center: Vec<f64>, neighbors: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let f = normalized(center)?;
    let nbs = neighbors.into_iter().map(normalized).collect::<PyResult<Vec<_>>>()?;
    let refs: Vec<_> = nbs.iter().collect();
    Ok(core::compute_ahv(&f, &refs).map_err(err)?.columns)
}

#[pymodule]
fn gate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(attention_score, m)?)?;
    m.add_function(wrap_pyfunction!(ed_distance, m)?)?;
    m.add_function(wrap_pyfunction!(compute_msg, m)?)?;
    m.add_function(wrap_pyfunction!(compute_ahv, m)?)?;
    m.add("MISSING_RSS", core::MISSING_RSS)?;
    Ok(())
}
