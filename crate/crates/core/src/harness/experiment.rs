//! Shared experiment glue: deterministic train/test pool splits, method
//! dispatch, and pool-level evaluation used by the CLI and the ablation.

use crate::error::{Error, Result};
use crate::graph::{EmbeddingTable, ProxyEncoding};
use crate::harness::metrics::{compute_metrics, MetricsRecord};
use crate::meta::{
    proxy_encodings_for, train_baseline, train_ffomaml, BaselineKind, TrainConfig, TrainedModel,
};
use crate::seeding::rng_for;
use crate::task::{TaskDataset, TaskUniverse};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ffomaml,
    Fomaml,
    Reptile,
    PerTaskLinear,
    PerTaskMlp,
}

impl Method {
    pub fn parse(name: &str) -> Result<Method> {
        Ok(match name {
            "ffomaml" => Method::Ffomaml,
            "fomaml" => Method::Fomaml,
            "reptile" => Method::Reptile,
            "linear" => Method::PerTaskLinear,
            "mlp" => Method::PerTaskMlp,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown method {other:?}; expected ffomaml|fomaml|reptile|linear|mlp"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ffomaml => "ffomaml",
            Method::Fomaml => "fomaml",
            Method::Reptile => "reptile",
            Method::PerTaskLinear => "linear",
            Method::PerTaskMlp => "mlp",
        }
    }
}

/// Split a universe's tasks into a training universe and held-out test
/// tasks. The shuffle is keyed by the universe's own seed so training and
/// evaluation runs agree on the split regardless of the run seed.
pub fn split_test_pool(universe: &TaskUniverse, test_fraction: f64) -> (TaskUniverse, Vec<TaskDataset>) {
    let n = universe.tasks.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(universe.rng_seed, &[0x80]);
    use rand::Rng;
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_test = ((n as f64) * test_fraction).floor() as usize;
    let n_test = n_test.min(n.saturating_sub(1));
    let test: Vec<TaskDataset> = order[..n_test]
        .iter()
        .map(|&i| universe.tasks[i].clone())
        .collect();
    let train_tasks: Vec<TaskDataset> = order[n_test..]
        .iter()
        .map(|&i| universe.tasks[i].clone())
        .collect();
    let train = TaskUniverse {
        tasks: train_tasks,
        products: universe.products.clone(),
        feature_dim: universe.feature_dim,
        rng_seed: universe.rng_seed,
    };
    (train, test)
}

pub fn train_method(
    method: Method,
    train_pool: &TaskUniverse,
    embeddings: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    match method {
        Method::Ffomaml => Ok(TrainedModel::Meta(train_ffomaml(train_pool, embeddings, config)?)),
        Method::Fomaml => train_baseline(BaselineKind::Fomaml, train_pool, config),
        Method::Reptile => train_baseline(BaselineKind::Reptile, train_pool, config),
        Method::PerTaskLinear => train_baseline(BaselineKind::PerTaskLinear, train_pool, config),
        Method::PerTaskMlp => train_baseline(BaselineKind::PerTaskMlp, train_pool, config),
    }
}

/// Proxy encodings for evaluation targets, drawn from the training pool.
/// Models without an active modulation path get zero encodings sized for
/// their generator input.
pub fn evaluation_encodings(
    model: &TrainedModel,
    tasks: &[TaskDataset],
    train_pool: &TaskUniverse,
    embeddings: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<Vec<ProxyEncoding>> {
    let zero_dim = match model.meta_state() {
        Some(state) => state.film_gen.input_dim,
        None => embeddings.dim + 2,
    };
    let film_active = model
        .meta_state()
        .is_some_and(|s| s.film_enabled && !embeddings.vectors.is_empty());
    if !film_active {
        return Ok(vec![ProxyEncoding::zeros(zero_dim); tasks.len()]);
    }
    let refs: Vec<&TaskDataset> = tasks.iter().collect();
    proxy_encodings_for(
        &refs,
        train_pool,
        embeddings,
        config.proxy_delta,
        config.include_target_proxy,
    )
}

/// Evaluate a model over held-out tasks: per-task adaptation, pooled
/// predictions, one metrics record.
pub fn evaluate_pool(
    model: &TrainedModel,
    tasks: &[TaskDataset],
    encodings: &[ProxyEncoding],
) -> Result<MetricsRecord> {
    if tasks.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut predictions = Vec::new();
    let mut targets = Vec::new();
    for (task, z) in tasks.iter().zip(encodings.iter()) {
        let eval = model.evaluate_task(task, z)?;
        predictions.extend(eval.predictions);
        targets.extend(task.query.iter().map(|o| o.y));
    }
    Ok(compute_metrics(&predictions, &targets)?.with_task_count(tasks.len()))
}
