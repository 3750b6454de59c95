//! Forecasting tasks, support/query splits, and the seeded synthetic
//! task-family generator used by the desk-scale experiments.
//!
//! A task is one (product, environment) demand-prediction problem. Demand
//! follows `y = f(x) + noise` where `x` flattens to
//! `(product features, environment features, historical price, historical
//! demand, query price)` in that fixed order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng_for};

const STAGE_CLUSTER: u64 = 0x10;
const STAGE_PRODUCT: u64 = 0x11;
const STAGE_TASK: u64 = 0x12;
const STAGE_SPLIT: u64 = 0x13;
const STAGE_HISTORY: u64 = 0x14;

/// Identifies one task inside a universe: product i in environment j.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId {
    pub product_index: usize,
    pub environment_index: usize,
}

impl TaskId {
    pub fn new(product_index: usize, environment_index: usize) -> Self {
        TaskId {
            product_index,
            environment_index,
        }
    }

    /// Stable 64-bit label for seed derivation.
    pub fn seed_label(&self) -> u64 {
        ((self.product_index as u64) << 32) ^ self.environment_index as u64
    }
}

/// One observed input: product features `s`, environment features `v`,
/// a historical (price, demand) pair and the price being queried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTuple {
    pub product_features: Vec<f64>,
    pub environment_features: Vec<f64>,
    pub hist_price: f64,
    pub hist_demand: f64,
    pub query_price: f64,
}

impl FeatureTuple {
    /// Flattened length: |s| + |v| + 3.
    pub fn dim(&self) -> usize {
        self.product_features.len() + self.environment_features.len() + 3
    }

    /// Flattening order is fixed: (s, v, hist_price, hist_demand, query_price).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&self.product_features);
        out.extend_from_slice(&self.environment_features);
        out.push(self.hist_price);
        out.push(self.hist_demand);
        out.push(self.query_price);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.product_features.iter().all(|v| v.is_finite())
            && self.environment_features.iter().all(|v| v.is_finite())
            && self.hist_price.is_finite()
            && self.hist_demand.is_finite()
            && self.query_price.is_finite()
            && self.hist_demand >= 0.0
    }
}

/// A feature tuple with its demand target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: FeatureTuple,
    pub y: f64,
}

/// One task's data: the k-shot support set, the held-out query set, and a
/// hierarchy label (product category / taxonomy) used for edge decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub id: TaskId,
    pub support: Vec<Observation>,
    pub query: Vec<Observation>,
    pub hierarchy_label: String,
    /// Coefficients of the latent linear demand function, when the task was
    /// synthesized. Real-data ingestion leaves this unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_coefficients: Option<Vec<f64>>,
}

impl TaskDataset {
    pub fn all_observations(&self) -> impl Iterator<Item = &Observation> {
        self.support.iter().chain(self.query.iter())
    }

    pub fn mean_support_target(&self) -> f64 {
        if self.support.is_empty() {
            return 0.0;
        }
        self.support.iter().map(|o| o.y).sum::<f64>() / self.support.len() as f64
    }

    pub fn x_dims_consistent(&self) -> bool {
        let mut dims = self.all_observations().map(|o| o.x.dim());
        match dims.next() {
            None => true,
            Some(first) => dims.all(|d| d == first),
        }
    }
}

/// Per-product metadata: static features, brand and hierarchy labels for
/// graph construction, and daily sales/price series for the graph encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductMeta {
    pub features: Vec<f64>,
    pub brand: String,
    pub hierarchy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    pub sales_history: Vec<f64>,
    pub price_history: Vec<f64>,
}

/// A set of tasks drawn from one task distribution, plus the product table
/// they reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskUniverse {
    pub tasks: Vec<TaskDataset>,
    pub products: Vec<ProductMeta>,
    pub feature_dim: usize,
    pub rng_seed: u64,
}

impl TaskUniverse {
    pub fn task(&self, id: TaskId) -> Option<&TaskDataset> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Configuration for the synthetic task family. Tasks in the same latent
/// cluster share base coefficients up to a small per-task perturbation, so
/// "similar tasks" are well defined and proxy selection has signal to find.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_products: usize,
    pub envs_per_product: usize,
    pub samples_per_task: usize,
    pub k_shot: usize,
    pub product_dim: usize,
    pub env_dim: usize,
    pub noise_sigma: f64,
    pub n_clusters: usize,
    pub price_min: f64,
    pub price_max: f64,
    /// Std of the per-task Gaussian perturbation around cluster coefficients.
    pub coeff_spread: f64,
    /// Std of the per-observation jitter applied to the task-level feature
    /// means, keeping each task's design matrix full rank.
    pub feature_jitter: f64,
    /// Clamp demand at zero after noise is added (off by default).
    pub clip_negative_demand: bool,
    /// Length of the per-product daily sales/price series.
    pub history_days: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_products: 10,
            envs_per_product: 5,
            samples_per_task: 20,
            k_shot: 5,
            product_dim: 2,
            env_dim: 2,
            noise_sigma: 0.1,
            n_clusters: 2,
            price_min: 0.5,
            price_max: 2.0,
            coeff_spread: 0.1,
            feature_jitter: 0.3,
            clip_negative_demand: false,
            history_days: 40,
        }
    }
}

impl SynthConfig {
    pub fn feature_dim(&self) -> usize {
        self.product_dim + self.env_dim + 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_products == 0
            || self.envs_per_product == 0
            || self.samples_per_task == 0
            || self.n_clusters == 0
            || self.product_dim == 0
            || self.env_dim == 0
            || self.history_days == 0
        {
            return Err(Error::InvalidConfig("counts must be positive".into()));
        }
        if self.k_shot == 0 {
            return Err(Error::InvalidConfig("k_shot must be positive".into()));
        }
        if self.k_shot >= self.samples_per_task {
            return Err(Error::InvalidConfig(format!(
                "k_shot {} must be smaller than samples_per_task {}",
                self.k_shot, self.samples_per_task
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise_sigma must be non-negative".into()));
        }
        if !(self.price_min.is_finite() && self.price_max.is_finite() && self.price_min < self.price_max) {
            return Err(Error::InvalidConfig("price range must be a proper interval".into()));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Generate a task universe from the synthetic family. Deterministic given
/// (config, seed): every entity draws from its own derived stream.
pub fn generate_synthetic_universe(config: &SynthConfig, seed: u64) -> Result<TaskUniverse> {
    config.validate()?;
    let m = config.feature_dim();

    // Cluster-level draws: base coefficients and a static-feature center.
    let mut cluster_coeffs = Vec::with_capacity(config.n_clusters);
    let mut cluster_centers = Vec::with_capacity(config.n_clusters);
    for c in 0..config.n_clusters {
        let mut rng = rng_for(seed, &[STAGE_CLUSTER, c as u64]);
        cluster_coeffs.push(normal_vec(&mut rng, m));
        cluster_centers.push(normal_vec(&mut rng, config.product_dim));
    }

    // Product-level draws: static features near the cluster center plus a
    // cluster-patterned daily history for the graph encoder.
    let mut products = Vec::with_capacity(config.n_products);
    for i in 0..config.n_products {
        let cluster = i % config.n_clusters;
        let mut rng = rng_for(seed, &[STAGE_PRODUCT, i as u64]);
        let features: Vec<f64> = cluster_centers[cluster]
            .iter()
            .map(|c| c + 0.25 * normal(&mut rng))
            .collect();

        let mut hist_rng = rng_for(seed, &[STAGE_HISTORY, i as u64]);
        let base = 5.0 + 2.0 * cluster as f64;
        let amplitude = 1.5 + 0.5 * cluster as f64;
        let period = 8.0 + 3.0 * cluster as f64;
        let phase = 1.7 * cluster as f64;
        let mut sales_history = Vec::with_capacity(config.history_days);
        let mut price_history = Vec::with_capacity(config.history_days);
        for d in 0..config.history_days {
            let day = d as f64;
            let level = base
                + amplitude * (2.0 * std::f64::consts::PI * day / period + phase).sin()
                + 0.3 * normal(&mut hist_rng);
            sales_history.push(level.max(0.0));
            price_history.push(
                1.0 + 0.2 * (2.0 * std::f64::consts::PI * day / 11.0 + cluster as f64).sin()
                    + 0.05 * normal(&mut hist_rng),
            );
        }

        products.push(ProductMeta {
            features,
            brand: format!("brand-{cluster}"),
            hierarchy: format!("cat-{cluster}"),
            cluster: Some(cluster),
            sales_history,
            price_history,
        });
    }

    // Task-level draws: per-task coefficients and observations.
    let mut tasks = Vec::with_capacity(config.n_products * config.envs_per_product);
    for i in 0..config.n_products {
        let cluster = i % config.n_clusters;
        for j in 0..config.envs_per_product {
            let id = TaskId::new(i, j);
            let mut rng = rng_for(seed, &[STAGE_TASK, id.seed_label()]);

            let coeffs: Vec<f64> = cluster_coeffs[cluster]
                .iter()
                .map(|w| w + config.coeff_spread * normal(&mut rng))
                .collect();
            let env_mean = normal_vec(&mut rng, config.env_dim);
            let demand_level = 2.0 + 1.5 * cluster as f64;

            let mut samples = Vec::with_capacity(config.samples_per_task);
            for _ in 0..config.samples_per_task {
                let product_features: Vec<f64> = products[i]
                    .features
                    .iter()
                    .map(|f| f + config.feature_jitter * normal(&mut rng))
                    .collect();
                let environment_features: Vec<f64> = env_mean
                    .iter()
                    .map(|f| f + config.feature_jitter * normal(&mut rng))
                    .collect();
                let hist_price = rng.random_range(config.price_min..config.price_max);
                let hist_demand = (demand_level + 0.5 * normal(&mut rng)).max(0.0);
                let query_price = rng.random_range(config.price_min..config.price_max);

                let x = FeatureTuple {
                    product_features,
                    environment_features,
                    hist_price,
                    hist_demand,
                    query_price,
                };
                let noise: f64 = normal(&mut rng);
                let mut y = crate::linalg::dot(&coeffs, &x.flatten()) + config.noise_sigma * noise;
                if config.clip_negative_demand {
                    y = y.max(0.0);
                }
                samples.push(Observation { x, y });
            }

            let split_seed = derive_seed(seed, &[STAGE_SPLIT, id.seed_label()]);
            let mut task = split_support_query(
                id,
                &products[i].hierarchy,
                samples,
                config.k_shot,
                split_seed,
            )?;
            task.latent_coefficients = Some(coeffs);
            tasks.push(task);
        }
    }

    Ok(TaskUniverse {
        tasks,
        products,
        feature_dim: m,
        rng_seed: seed,
    })
}

/// Split a task's samples into a k-shot support set and a query set holding
/// the remainder, using a deterministic seeded shuffle.
pub fn split_support_query(
    id: TaskId,
    hierarchy_label: &str,
    task_samples: Vec<Observation>,
    k: usize,
    seed: u64,
) -> Result<TaskDataset> {
    if task_samples.len() <= k {
        return Err(Error::InsufficientSamples {
            needed: k + 1,
            got: task_samples.len(),
        });
    }
    let mut order: Vec<usize> = (0..task_samples.len()).collect();
    let mut rng = rng_for(seed, &[]);
    // Fisher-Yates, fixed iteration order for reproducibility.
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }

    let mut samples: Vec<Option<Observation>> = task_samples.into_iter().map(Some).collect();
    let mut support = Vec::with_capacity(k);
    let mut query = Vec::with_capacity(samples.len() - k);
    for (pos, &idx) in order.iter().enumerate() {
        let obs = samples[idx].take().expect("each index taken once");
        if pos < k {
            support.push(obs);
        } else {
            query.push(obs);
        }
    }

    Ok(TaskDataset {
        id,
        support,
        query,
        hierarchy_label: hierarchy_label.to_string(),
        latent_coefficients: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{least_squares, Matrix};
    use proptest::prelude::*;

    fn obs(v: f64) -> Observation {
        Observation {
            x: FeatureTuple {
                product_features: vec![v],
                environment_features: vec![v],
                hist_price: 1.0,
                hist_demand: 1.0,
                query_price: 1.0,
            },
            y: v,
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_universes() {
        let config = SynthConfig::default();
        let a = generate_synthetic_universe(&config, 7).unwrap();
        let b = generate_synthetic_universe(&config, 7).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());

        let c = generate_synthetic_universe(&config, 8).unwrap();
        assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());
    }

    #[test]
    fn default_config_yields_fifty_tasks() {
        let universe = generate_synthetic_universe(&SynthConfig::default(), 3).unwrap();
        assert_eq!(universe.tasks.len(), 50);
        assert_eq!(universe.feature_dim, 7);
    }

    #[test]
    fn zero_noise_demand_is_exact() {
        let config = SynthConfig {
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        let universe = generate_synthetic_universe(&config, 11).unwrap();
        for task in &universe.tasks {
            let coeffs = task.latent_coefficients.as_ref().unwrap();
            for o in task.all_observations() {
                let expected = crate::linalg::dot(coeffs, &o.x.flatten());
                assert_eq!(o.y, expected);
            }
        }
    }

    #[test]
    fn zero_noise_least_squares_recovers_coefficients() {
        let config = SynthConfig {
            noise_sigma: 0.0,
            samples_per_task: 30,
            ..SynthConfig::default()
        };
        let universe = generate_synthetic_universe(&config, 5).unwrap();
        for task in universe.tasks.iter().take(5) {
            let rows: Vec<Vec<f64>> = task.all_observations().map(|o| o.x.flatten()).collect();
            let targets: Vec<f64> = task.all_observations().map(|o| o.y).collect();
            let design = Matrix::from_rows(rows);
            let fit = least_squares(&design, &targets, 1e-10);
            let truth = task.latent_coefficients.as_ref().unwrap();
            for (a, b) in fit.iter().zip(truth.iter()) {
                assert!((a - b).abs() < 1e-8, "recovered {a} vs true {b}");
            }
        }
    }

    #[test]
    fn split_sizes_match_contract() {
        let samples: Vec<Observation> = (0..20).map(|i| obs(i as f64)).collect();
        let task = split_support_query(TaskId::new(0, 0), "cat", samples, 5, 42).unwrap();
        assert_eq!(task.support.len(), 5);
        assert_eq!(task.query.len(), 15);

        let samples: Vec<Observation> = (0..6).map(|i| obs(i as f64)).collect();
        let task = split_support_query(TaskId::new(0, 0), "cat", samples, 5, 42).unwrap();
        assert_eq!(task.support.len(), 5);
        assert_eq!(task.query.len(), 1);
    }

    #[test]
    fn split_rejects_insufficient_samples() {
        let samples: Vec<Observation> = (0..5).map(|i| obs(i as f64)).collect();
        let err = split_support_query(TaskId::new(0, 0), "cat", samples, 5, 42).unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples { needed: 6, got: 5 }));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let config = SynthConfig {
            n_products: 0,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic_universe(&config, 1).is_err());

        let config = SynthConfig {
            noise_sigma: -1.0,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic_universe(&config, 1).is_err());

        let config = SynthConfig {
            k_shot: SynthConfig::default().samples_per_task,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic_universe(&config, 1).is_err());
    }

    #[test]
    fn clip_flag_floors_demand_at_zero() {
        let config = SynthConfig {
            noise_sigma: 5.0,
            clip_negative_demand: true,
            ..SynthConfig::default()
        };
        let universe = generate_synthetic_universe(&config, 2).unwrap();
        assert!(universe
            .tasks
            .iter()
            .flat_map(|t| t.all_observations())
            .all(|o| o.y >= 0.0));

        let unclipped = generate_synthetic_universe(
            &SynthConfig {
                clip_negative_demand: false,
                ..config
            },
            2,
        )
        .unwrap();
        assert!(unclipped
            .tasks
            .iter()
            .flat_map(|t| t.all_observations())
            .any(|o| o.y < 0.0));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..40, k_frac in 0.05f64..0.95, seed in 0u64..1000) {
            let k = ((n as f64 * k_frac) as usize).clamp(1, n - 1);
            let samples: Vec<Observation> = (0..n).map(|i| obs(i as f64)).collect();
            let task = split_support_query(TaskId::new(0, 0), "cat", samples, k, seed).unwrap();
            prop_assert_eq!(task.support.len(), k);
            prop_assert_eq!(task.support.len() + task.query.len(), n);

            let mut seen: Vec<f64> = task
                .support
                .iter()
                .chain(task.query.iter())
                .map(|o| o.y)
                .collect();
            seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected: Vec<f64> = (0..n).map(|i| i as f64).collect();
            prop_assert_eq!(seen, expected);
        }
    }
}
