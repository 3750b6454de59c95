//! Python bindings: synthetic task universes, graph-encoder embeddings,
//! meta-training with feature modulation, evaluation, metrics, and the
//! risk-simulator sweeps.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::PathBuf;

use ffomaml::graph::{build_brand_graph, train_gcn_forecaster, EmbeddingTable, GcnConfig, NodeHistory};
use ffomaml::harness::experiment::{
    evaluate_pool, evaluation_encodings, split_test_pool, train_method, Method,
};
use ffomaml::meta::{
    checkpoint_from_bytes, checkpoint_to_bytes, TrainConfig, TrainedModel,
};
use ffomaml::model::{FilmCoefficients, ModelKind};
use ffomaml::task::{generate_synthetic_universe, SynthConfig, TaskUniverse};
use ffomaml::theory::{sweep, GenerativeConfig, SweepAxis};

fn to_py_err(err: ffomaml::Error) -> PyErr {
    match &err {
        ffomaml::Error::Io(_) => PyIOError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// A set of forecasting tasks plus the per-product metadata.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Universe {
    inner: TaskUniverse,
}

#[pymethods]
impl Universe {
    /// Generate a clustered synthetic universe.
    #[staticmethod]
    #[pyo3(signature = (
        seed,
        n_products = 10,
        envs_per_product = 5,
        samples_per_task = 20,
        k_shot = 5,
        product_dim = 2,
        env_dim = 2,
        noise_sigma = 0.1,
        n_clusters = 2,
        coeff_spread = 0.1,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn synth(
        seed: u64,
        n_products: usize,
        envs_per_product: usize,
        samples_per_task: usize,
        k_shot: usize,
        product_dim: usize,
        env_dim: usize,
        noise_sigma: f64,
        n_clusters: usize,
        coeff_spread: f64,
    ) -> PyResult<Universe> {
        let config = SynthConfig {
            n_products,
            envs_per_product,
            samples_per_task,
            k_shot,
            product_dim,
            env_dim,
            noise_sigma,
            n_clusters,
            coeff_spread,
            ..SynthConfig::default()
        };
        Ok(Universe {
            inner: generate_synthetic_universe(&config, seed).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Universe> {
        let text = std::fs::read_to_string(path)?;
        Ok(Universe {
            inner: TaskUniverse::from_json(&text).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(path, self.inner.to_json().map_err(to_py_err)?)?;
        Ok(())
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py_err)
    }

    #[getter]
    fn task_count(&self) -> usize {
        self.inner.tasks.len()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim
    }

    #[getter]
    fn product_count(&self) -> usize {
        self.inner.products.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Universe(tasks={}, products={}, feature_dim={})",
            self.inner.tasks.len(),
            self.inner.products.len(),
            self.inner.feature_dim
        )
    }
}

/// Per-product embedding vectors from the trained graph forecaster.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Embeddings {
    inner: EmbeddingTable,
}

#[pymethods]
impl Embeddings {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn count(&self) -> usize {
        self.inner.vectors.len()
    }

    fn vector(&self, node: usize) -> PyResult<Vec<f64>> {
        self.inner
            .get(node)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("no embedding for node {node}")))
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Embeddings> {
        Ok(Embeddings {
            inner: EmbeddingTable::from_text(text).map_err(to_py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Embeddings(count={}, dim={})", self.inner.vectors.len(), self.inner.dim)
    }
}

/// Train the graph forecaster on a universe's product table and extract
/// per-product embeddings.
#[pyfunction]
#[pyo3(signature = (universe, seed = 0, epochs = 100, context_days = 16))]
fn train_embeddings(
    universe: &Universe,
    seed: u64,
    epochs: usize,
    context_days: usize,
) -> PyResult<Embeddings> {
    let labels: Vec<String> = universe.inner.products.iter().map(|p| p.brand.clone()).collect();
    let graph = build_brand_graph(&labels);
    let histories: Vec<NodeHistory> = universe.inner.products.iter().map(NodeHistory::from).collect();
    let config = GcnConfig {
        epochs,
        context_days,
        ..GcnConfig::default()
    };
    let result = train_gcn_forecaster(&graph, &histories, &config, seed).map_err(to_py_err)?;
    Ok(Embeddings {
        inner: result.embeddings,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_config_from(
    seed: u64,
    episodes: u64,
    meta_lr: f64,
    inner_lr: f64,
    dropout: f64,
    hidden_size: usize,
    model: &str,
    proxy_delta: f64,
) -> PyResult<TrainConfig> {
    let model_kind = match model {
        "linear" => ModelKind::Linear,
        "mlp" => ModelKind::Mlp,
        other => return Err(PyValueError::new_err(format!("model must be linear or mlp, got {other:?}"))),
    };
    Ok(TrainConfig {
        seed,
        episodes,
        meta_lr,
        inner_lr,
        dropout_rate: dropout,
        hidden_size,
        model_kind,
        proxy_delta,
        val_interval: 100,
        ..TrainConfig::default()
    })
}

/// A trained, evaluatable model.
#[pyclass]
struct Model {
    inner: TrainedModel,
    config: TrainConfig,
    method: String,
}

#[pymethods]
impl Model {
    /// Evaluate on the universe's held-out pool: adapt on each task's
    /// support set and score the query set.
    #[pyo3(signature = (universe, embeddings = None, test_fraction = 0.25))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        universe: &Universe,
        embeddings: Option<&Embeddings>,
        test_fraction: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let table = embeddings.map(|e| e.inner.clone()).unwrap_or_else(EmbeddingTable::empty);
        let (train_pool, test_tasks) = split_test_pool(&universe.inner, test_fraction);
        let encodings =
            evaluation_encodings(&self.inner, &test_tasks, &train_pool, &table, &self.config)
                .map_err(to_py_err)?;
        let record = evaluate_pool(&self.inner, &test_tasks, &encodings).map_err(to_py_err)?;
        let out = PyDict::new(py);
        out.set_item("method", &self.method)?;
        out.set_item("mse", record.mse)?;
        out.set_item("mae", record.mae)?;
        out.set_item("mape", record.mape)?;
        out.set_item("task_count", record.task_count)?;
        Ok(out)
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        match self.inner.meta_state() {
            Some(state) => {
                std::fs::write(path, checkpoint_to_bytes(state))?;
                Ok(())
            }
            None => Err(PyValueError::new_err(
                "per-task baselines fit at evaluation time and have no checkpoint",
            )),
        }
    }

    #[staticmethod]
    fn load_checkpoint(path: PathBuf) -> PyResult<Model> {
        let bytes = std::fs::read(path)?;
        let state = checkpoint_from_bytes(&bytes).map_err(to_py_err)?;
        let method = if state.film_enabled { "ffomaml" } else { "fomaml" };
        Ok(Model {
            inner: TrainedModel::Meta(state),
            config: TrainConfig::default(),
            method: method.to_string(),
        })
    }

    fn __repr__(&self) -> String {
        format!("Model(method={:?})", self.method)
    }
}

/// Train a forecasting method on the universe's training pool.
#[pyfunction]
#[pyo3(signature = (
    universe,
    embeddings = None,
    method = "ffomaml",
    seed = 0,
    episodes = 1000,
    meta_lr = 1e-3,
    inner_lr = 1e-3,
    dropout = 0.5,
    hidden_size = 32,
    model = "mlp",
    proxy_delta = 0.5,
    test_fraction = 0.25,
))]
#[allow(clippy::too_many_arguments)]
fn train(
    universe: &Universe,
    embeddings: Option<&Embeddings>,
    method: &str,
    seed: u64,
    episodes: u64,
    meta_lr: f64,
    inner_lr: f64,
    dropout: f64,
    hidden_size: usize,
    model: &str,
    proxy_delta: f64,
    test_fraction: f64,
) -> PyResult<Model> {
    let method_kind = Method::parse(method).map_err(to_py_err)?;
    let config = train_config_from(
        seed,
        episodes,
        meta_lr,
        inner_lr,
        dropout,
        hidden_size,
        model,
        proxy_delta,
    )?;
    let table = embeddings.map(|e| e.inner.clone()).unwrap_or_else(EmbeddingTable::empty);
    let (train_pool, _) = split_test_pool(&universe.inner, test_fraction);
    let trained = train_method(method_kind, &train_pool, &table, &config).map_err(to_py_err)?;
    Ok(Model {
        inner: trained,
        config,
        method: method.to_string(),
    })
}

/// Feature-wise affine modulation: scale .* x + shift.
#[pyfunction]
fn film_modulate(x: Vec<f64>, scale: Vec<f64>, shift: Vec<f64>) -> PyResult<Vec<f64>> {
    ffomaml::model::film_modulate(&x, &FilmCoefficients { scale, shift }).map_err(to_py_err)
}

/// MSE / MAE / MAPE over aligned prediction and target lists.
#[pyfunction]
fn compute_metrics<'py>(
    py: Python<'py>,
    predictions: Vec<f64>,
    targets: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let record =
        ffomaml::harness::metrics::compute_metrics(&predictions, &targets).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("mse", record.mse)?;
    out.set_item("mae", record.mae)?;
    out.set_item("mape", record.mape)?;
    Ok(out)
}

/// Worst relative disagreement between backprop and central finite
/// differences over randomized instances; small values certify the
/// gradient path.
#[pyfunction]
#[pyo3(signature = (instances = 20, seed = 0))]
fn gradient_check(instances: u64, seed: u64) -> PyResult<f64> {
    ffomaml::model::gradient_check(instances, seed).map_err(to_py_err)
}

/// Sweep the risk simulator; returns rows of (axis, mean, lo, hi).
#[pyfunction]
#[pyo3(signature = (
    axis,
    grid,
    n_seeds = 10,
    seed = 0,
    task_count = 100,
    samples_per_task = 20,
    task_feature_dim = 2,
    noise_sigma = 0.5,
    lipschitz_c = 1.0,
    mc_samples = 4000,
))]
#[allow(clippy::too_many_arguments)]
fn theory_sweep(
    axis: &str,
    grid: Vec<f64>,
    n_seeds: usize,
    seed: u64,
    task_count: usize,
    samples_per_task: usize,
    task_feature_dim: usize,
    noise_sigma: f64,
    lipschitz_c: f64,
    mc_samples: usize,
) -> PyResult<Vec<(f64, f64, f64, f64)>> {
    let axis = match axis {
        "h" => SweepAxis::ThresholdH,
        "T" | "t" => SweepAxis::TaskCountT,
        other => return Err(PyValueError::new_err(format!("axis must be h or T, got {other:?}"))),
    };
    let config = GenerativeConfig {
        task_count,
        samples_per_task,
        task_feature_dim,
        noise_sigma,
        lipschitz_c,
        mc_samples,
        seed,
        ..GenerativeConfig::default()
    };
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| seed.wrapping_add(i)).collect();
    let curve = sweep(axis, &grid, &config, &seeds).map_err(to_py_err)?;
    Ok((0..curve.axis.len())
        .map(|i| (curve.axis[i], curve.mean[i], curve.lo[i], curve.hi[i]))
        .collect())
}

#[pymodule]
fn ffomaml_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Universe>()?;
    m.add_class::<Embeddings>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(film_modulate, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    m.add_function(wrap_pyfunction!(theory_sweep, m)?)?;
    Ok(())
}
