//! k-shot ablation: re-split every task at each k on the grid, train and
//! evaluate per seed, and emit one curve row per grid point.

use crate::error::{Error, Result};
use crate::graph::EmbeddingTable;
use crate::harness::experiment::{evaluate_pool, evaluation_encodings, split_test_pool, train_method, Method};
use crate::meta::TrainConfig;
use crate::seeding::derive_seed;
use crate::task::{split_support_query, TaskUniverse};
use crate::theory::bootstrap_mean_ci;

#[derive(Debug, Clone, PartialEq)]
pub struct KshotPoint {
    pub k: usize,
    pub mean_mae: f64,
    pub lo: f64,
    pub hi: f64,
    pub mean_mse: f64,
    pub seeds: Vec<u64>,
}

/// Rebuild the universe with a k-shot split of each task's samples.
pub fn resplit_universe(universe: &TaskUniverse, k: usize, seed: u64) -> Result<TaskUniverse> {
    let mut tasks = Vec::with_capacity(universe.tasks.len());
    for task in &universe.tasks {
        let samples: Vec<_> = task.all_observations().cloned().collect();
        let split_seed = derive_seed(seed, &[0x90, task.id.seed_label()]);
        let mut new_task =
            split_support_query(task.id, &task.hierarchy_label, samples, k, split_seed)?;
        new_task.latent_coefficients = task.latent_coefficients.clone();
        tasks.push(new_task);
    }
    Ok(TaskUniverse {
        tasks,
        products: universe.products.clone(),
        feature_dim: universe.feature_dim,
        rng_seed: universe.rng_seed,
    })
}

/// For each k in the grid and each seed: re-split, train, evaluate, and
/// summarize the held-out MAE with a bootstrap interval.
pub fn ablate_kshot(
    universe: &TaskUniverse,
    embeddings: &EmbeddingTable,
    config: &TrainConfig,
    k_grid: &[usize],
    seeds: &[u64],
) -> Result<Vec<KshotPoint>> {
    if k_grid.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("k grid and seeds must be non-empty".into()));
    }
    if k_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("k grid must be strictly increasing".into()));
    }
    let min_samples = universe
        .tasks
        .iter()
        .map(|t| t.support.len() + t.query.len())
        .min()
        .ok_or(Error::EmptyInput)?;
    if *k_grid.last().unwrap() >= min_samples {
        return Err(Error::InvalidConfig(format!(
            "largest k {} must stay below the smallest task sample count {min_samples}",
            k_grid.last().unwrap()
        )));
    }

    let mut points = Vec::with_capacity(k_grid.len());
    for (gi, &k) in k_grid.iter().enumerate() {
        let mut maes = Vec::with_capacity(seeds.len());
        let mut mses = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let resplit = resplit_universe(universe, k, seed)?;
            let (train_pool, test_tasks) = split_test_pool(&resplit, 0.25);
            let cfg = TrainConfig {
                k_shot: k,
                seed,
                ..config.clone()
            };
            let model = train_method(Method::Ffomaml, &train_pool, embeddings, &cfg)?;
            let encodings =
                evaluation_encodings(&model, &test_tasks, &train_pool, embeddings, &cfg)?;
            let record = evaluate_pool(&model, &test_tasks, &encodings)?;
            maes.push(record.mae);
            mses.push(record.mse);
        }
        let mean_mae = maes.iter().sum::<f64>() / maes.len() as f64;
        let mean_mse = mses.iter().sum::<f64>() / mses.len() as f64;
        let (lo, hi) = bootstrap_mean_ci(&maes, 1000, derive_seed(config.seed, &[0x91, gi as u64]));
        points.push(KshotPoint {
            k,
            mean_mae,
            lo,
            hi,
            mean_mse,
            seeds: seeds.to_vec(),
        });
    }
    Ok(points)
}
