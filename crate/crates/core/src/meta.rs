//! First-order meta-learning: single-step inner adaptation, feature
//! modulation conditioned on proxy encodings, the episodic F-FOMAML loop
//! with a warmup-linear schedule, plus FOMAML, Reptile, and per-task
//! baselines and checkpoint persistence.
//!
//! The outer update is strictly first order: per-task query gradients are
//! evaluated at the adapted parameters and applied to the shared
//! initialization without second derivatives. Gradients accumulate in
//! ascending task-id order so runs replay bit-for-bit.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{encode_proxy, select_proxy, EmbeddingTable, ProxyEncoding};
use crate::harness::metrics::compute_metrics;
use crate::linalg::Matrix;
use crate::model::{
    batch_backward, film_modulate, forward, init_params, FilmCoefficients, Gradient, ModelKind,
    ModelSpec, ParamVector,
};
use crate::seeding::{derive_seed, rng_for};
use crate::task::{TaskDataset, TaskUniverse};

const SEED_BETA: u64 = 0x40;
const SEED_FILM: u64 = 0x41;
const SEED_EPISODE: u64 = 0x42;
const SEED_DROPOUT: u64 = 0x43;
const SEED_POOLS: u64 = 0x44;
const SEED_PERTASK: u64 = 0x45;

const PASS_INNER: u64 = 1;
const PASS_OUTER: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    Fomaml,
    Reptile,
    PerTaskLinear,
    PerTaskMlp,
}

/// Training configuration. Defaults: hidden 32, k-shot 5, 1000 episodes,
/// learning rates 1e-3, warmup ratio 0.1, dropout 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub inner_lr: f64,
    pub meta_lr: f64,
    pub k_shot: usize,
    pub episodes: u64,
    pub warmup_ratio: f64,
    pub dropout_rate: f64,
    pub hidden_size: usize,
    pub seed: u64,
    pub task_batch_size: usize,
    /// Inner adaptation performs exactly one gradient step by default.
    pub inner_steps: usize,
    pub model_kind: ModelKind,
    pub optimizer: OptimizerKind,
    /// When false the modulation path is skipped entirely (plain FOMAML).
    pub film: bool,
    /// Similarity threshold for proxy selection, in (0,1).
    pub proxy_delta: f64,
    /// Whether a task may select itself as proxy data.
    pub include_target_proxy: bool,
    /// Fraction of tasks held out to track the best-validation state.
    pub val_fraction: f64,
    /// Validate every this many episodes (0 disables validation).
    pub val_interval: u64,
    pub reptile_inner_steps: usize,
    pub reptile_outer_lr: f64,
    pub pertask_epochs: usize,
    pub pertask_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            inner_lr: 1e-3,
            meta_lr: 1e-3,
            k_shot: 5,
            episodes: 1000,
            warmup_ratio: 0.1,
            dropout_rate: 0.5,
            hidden_size: 32,
            seed: 0,
            task_batch_size: 4,
            inner_steps: 1,
            model_kind: ModelKind::Mlp,
            optimizer: OptimizerKind::Adam,
            film: true,
            proxy_delta: 0.5,
            include_target_proxy: true,
            val_fraction: 0.2,
            val_interval: 50,
            reptile_inner_steps: 5,
            reptile_outer_lr: 0.1,
            pertask_epochs: 200,
            pertask_lr: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr > 0.0 && self.meta_lr > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::InvalidConfig("warmup_ratio must lie in [0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must lie in [0,1)".into()));
        }
        if !(0.0 < self.proxy_delta && self.proxy_delta < 1.0) {
            return Err(Error::InvalidConfig("proxy_delta must lie in (0,1)".into()));
        }
        if self.k_shot == 0 || self.task_batch_size == 0 || self.inner_steps == 0 {
            return Err(Error::InvalidConfig("counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig("val_fraction must lie in [0,1)".into()));
        }
        Ok(())
    }

    pub fn model_spec(&self, feature_dim: usize) -> ModelSpec {
        match self.model_kind {
            ModelKind::Linear => {
                let mut spec = ModelSpec::linear(feature_dim);
                spec.dropout_rate = self.dropout_rate;
                spec
            }
            ModelKind::Mlp => ModelSpec::mlp(feature_dim, &[self.hidden_size], self.dropout_rate),
        }
    }
}

/// Learning-rate multiplier of the warmup-linear schedule: 0 at step 0,
/// 1 at ceil(warmup_ratio * total), 0 at the final step, piecewise linear.
pub fn schedule_multiplier(step: u64, total: u64, warmup_ratio: f64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let warmup = (warmup_ratio * total as f64).ceil() as u64;
    if step <= warmup {
        if warmup == 0 {
            1.0
        } else {
            step as f64 / warmup as f64
        }
    } else if total <= warmup || step >= total {
        0.0
    } else {
        (total - step) as f64 / (total - warmup) as f64
    }
}

/// Adaptive-moment accumulators (0.9 / 0.999 / 1e-8).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: u64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let bc1 = 1.0 - B1.powi(t as i32);
        let bc2 = 1.0 - B2.powi(t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + EPS);
        }
    }
}

/// Generator of modulation coefficients from a proxy encoding: one hidden
/// ReLU layer, then a bias-free linear map to (scale - 1, shift). The output
/// weights start at zero so the initial modulation is the identity, and a
/// zero encoding yields zero gradients everywhere, which keeps the
/// empty-proxy trajectory identical to plain FOMAML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilmGenerator {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    /// Layout: w1 (hidden×input, row-major) ‖ b1 (hidden) ‖ w2 (2m×hidden).
    pub params: Vec<f64>,
}

impl FilmGenerator {
    pub fn new(input_dim: usize, hidden_dim: usize, feature_dim: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[SEED_FILM]);
        let bound = 1.0 / (input_dim.max(1) as f64).sqrt();
        let mut params = Vec::with_capacity(Self::count(input_dim, hidden_dim, feature_dim));
        for _ in 0..hidden_dim * input_dim {
            params.push(rng.random_range(-bound..bound));
        }
        params.extend(std::iter::repeat_n(0.0, hidden_dim)); // b1
        params.extend(std::iter::repeat_n(0.0, 2 * feature_dim * hidden_dim)); // w2 zero-init
        FilmGenerator {
            input_dim,
            hidden_dim,
            feature_dim,
            params,
        }
    }

    fn count(input_dim: usize, hidden_dim: usize, feature_dim: usize) -> usize {
        hidden_dim * input_dim + hidden_dim + 2 * feature_dim * hidden_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn hidden(&self, z: &[f64]) -> Vec<f64> {
        let (h, d) = (self.hidden_dim, self.input_dim);
        let w1 = &self.params[..h * d];
        let b1 = &self.params[h * d..h * d + h];
        (0..h)
            .map(|o| {
                let mut acc = b1[o];
                for (w, v) in w1[o * d..(o + 1) * d].iter().zip(z.iter()) {
                    acc += w * v;
                }
                acc.max(0.0)
            })
            .collect()
    }

    pub fn coefficients(&self, z: &ProxyEncoding) -> Result<FilmCoefficients> {
        if z.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: z.len(),
            });
        }
        let (h, m) = (self.hidden_dim, self.feature_dim);
        let hidden = self.hidden(&z.z);
        let w2 = &self.params[h * self.input_dim + h..];
        let mut scale = Vec::with_capacity(m);
        let mut shift = Vec::with_capacity(m);
        for o in 0..2 * m {
            let raw = crate::linalg::dot(&w2[o * h..(o + 1) * h], &hidden);
            if o < m {
                scale.push(1.0 + raw);
            } else {
                shift.push(raw);
            }
        }
        Ok(FilmCoefficients { scale, shift })
    }

    /// Gradient of the loss with respect to the generator parameters, given
    /// the loss gradients at the emitted (scale, shift).
    pub fn backward(&self, z: &[f64], d_scale: &[f64], d_shift: &[f64]) -> Vec<f64> {
        let (h, d, m) = (self.hidden_dim, self.input_dim, self.feature_dim);
        let w1 = &self.params[..h * d];
        let b1 = &self.params[h * d..h * d + h];
        let w2 = &self.params[h * d + h..];

        // Recompute hidden pre-activations.
        let mut pre = vec![0.0; h];
        for o in 0..h {
            let mut acc = b1[o];
            for (w, v) in w1[o * d..(o + 1) * d].iter().zip(z.iter()) {
                acc += w * v;
            }
            pre[o] = acc;
        }
        let hidden: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();

        let mut grads = vec![0.0; self.params.len()];
        let (g_w1, rest) = grads.split_at_mut(h * d);
        let (g_b1, g_w2) = rest.split_at_mut(h);

        let mut d_hidden = vec![0.0; h];
        for o in 0..2 * m {
            let d_raw = if o < m { d_scale[o] } else { d_shift[o - m] };
            if d_raw == 0.0 {
                continue;
            }
            for j in 0..h {
                g_w2[o * h + j] += d_raw * hidden[j];
                d_hidden[j] += d_raw * w2[o * h + j];
            }
        }
        for j in 0..h {
            if pre[j] > 0.0 {
                let g = d_hidden[j];
                g_b1[j] += g;
                for i in 0..d {
                    g_w1[j * d + i] += g * z[i];
                }
            }
        }
        grads
    }
}

/// Meta-learner state: shared initialization, modulation generator, and
/// optimizer/schedule bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaState {
    pub spec: ModelSpec,
    pub beta: ParamVector,
    pub film_gen: FilmGenerator,
    pub film_enabled: bool,
    pub episode: u64,
    pub total_episodes: u64,
    pub warmup_ratio: f64,
    pub inner_lr: f64,
    pub meta_lr: f64,
    pub inner_steps: usize,
    pub eval_inner_steps: usize,
    pub optimizer: OptimizerKind,
    pub opt_beta: AdamState,
    pub opt_film: AdamState,
    pub seed: u64,
}

impl MetaState {
    pub fn init(feature_dim: usize, proxy_dim: usize, config: &TrainConfig) -> Result<MetaState> {
        config.validate()?;
        let spec = config.model_spec(feature_dim);
        spec.validate()?;
        let beta = init_params(&spec, derive_seed(config.seed, &[SEED_BETA]))?;
        let film_gen = FilmGenerator::new(proxy_dim, config.hidden_size, feature_dim, config.seed);
        let n_beta = beta.len();
        let n_film = film_gen.param_count();
        Ok(MetaState {
            spec,
            beta,
            film_gen,
            film_enabled: config.film,
            episode: 0,
            total_episodes: config.episodes,
            warmup_ratio: config.warmup_ratio,
            inner_lr: config.inner_lr,
            meta_lr: config.meta_lr,
            inner_steps: config.inner_steps,
            eval_inner_steps: config.inner_steps,
            optimizer: config.optimizer,
            opt_beta: AdamState::new(n_beta),
            opt_film: AdamState::new(n_film),
            seed: config.seed,
        })
    }

    /// Modulation coefficients for a task, or None when the path is off.
    pub fn coefficients_for(&self, z: &ProxyEncoding) -> Result<Option<FilmCoefficients>> {
        if !self.film_enabled {
            return Ok(None);
        }
        Ok(Some(self.film_gen.coefficients(z)?))
    }

    pub fn all_finite(&self) -> bool {
        self.beta.all_finite() && self.film_gen.params.iter().all(|v| v.is_finite())
    }

    fn dropout_rng(&self, episode: u64, task: &TaskDataset, pass: u64, step: u64) -> ChaCha8Rng {
        rng_for(
            self.seed,
            &[SEED_DROPOUT, episode, task.id.seed_label(), pass, step],
        )
    }
}

/// One inner adaptation from the shared initialization on the task's
/// support set, with modulation applied. The shared parameters are not
/// mutated. Dropout never applies here; the episodic loop uses its own
/// training-mode path.
pub fn inner_update(state: &MetaState, task: &TaskDataset, z: &ProxyEncoding) -> Result<ParamVector> {
    if task.support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let coeffs = state.coefficients_for(z)?;
    adapt_params(state, task, coeffs.as_ref(), state.inner_steps, None)
}

/// Gradient-descent adaptation helper shared by training and evaluation.
/// `dropout_episode` selects the training-mode path with per-step masks.
fn adapt_params(
    state: &MetaState,
    task: &TaskDataset,
    coeffs: Option<&FilmCoefficients>,
    steps: usize,
    dropout_episode: Option<u64>,
) -> Result<ParamVector> {
    let mut params = state.beta.clone();
    for step in 0..steps {
        let grad = match dropout_episode {
            Some(episode) if state.spec.dropout_rate > 0.0 => {
                let mut rng = state.dropout_rng(episode, task, PASS_INNER, step as u64);
                batch_backward(&state.spec, &params, &task.support, coeffs, Some(&mut rng), false)?
                    .grad
            }
            _ => batch_backward(&state.spec, &params, &task.support, coeffs, None, false)?.grad,
        };
        if !grad.all_finite() {
            return Err(Error::NonFiniteGradient {
                context: "inner update".into(),
            });
        }
        for (p, g) in params.values.iter_mut().zip(grad.values.iter()) {
            *p -= state.inner_lr * g;
        }
    }
    Ok(params)
}

/// One meta-update over a task batch: per-task inner adaptation, query
/// gradients at the adapted parameters (first order), accumulation in
/// ascending task-id order, then an optimizer step scaled by the
/// warmup-linear schedule. Generator gradients flow only through the
/// modulation coefficients; the proxy encoding is a constant input.
pub fn meta_update(state: &mut MetaState, batch: &[(&TaskDataset, &ProxyEncoding)]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by_key(|&i| batch[i].0.id);

    let episode = state.episode;
    let mut g_beta = Gradient::zeros(state.beta.len());
    let mut g_film = vec![0.0; state.film_gen.param_count()];

    for &i in &order {
        let (task, z) = batch[i];
        if task.support.is_empty() {
            return Err(Error::EmptySupport);
        }
        if task.query.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let coeffs = state.coefficients_for(z)?;
        let adapted = adapt_params(state, task, coeffs.as_ref(), state.inner_steps, Some(episode))?;

        let out = if state.spec.dropout_rate > 0.0 {
            let mut rng = state.dropout_rng(episode, task, PASS_OUTER, 0);
            batch_backward(
                &state.spec,
                &adapted,
                &task.query,
                coeffs.as_ref(),
                Some(&mut rng),
                state.film_enabled,
            )?
        } else {
            batch_backward(
                &state.spec,
                &adapted,
                &task.query,
                coeffs.as_ref(),
                None,
                state.film_enabled,
            )?
        };
        for (acc, g) in g_beta.values.iter_mut().zip(out.grad.values.iter()) {
            *acc += g;
        }
        if let Some((d_scale, d_shift)) = out.film_grad {
            let gg = state.film_gen.backward(&z.z, &d_scale, &d_shift);
            for (acc, g) in g_film.iter_mut().zip(gg.iter()) {
                *acc += g;
            }
        }
    }

    if !g_beta.all_finite() || g_film.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient {
            context: "meta update".into(),
        });
    }

    let mult = schedule_multiplier(episode, state.total_episodes, state.warmup_ratio);
    let lr = state.meta_lr * mult;
    match state.optimizer {
        OptimizerKind::Sgd => {
            for (p, g) in state.beta.values.iter_mut().zip(g_beta.values.iter()) {
                *p -= lr * g;
            }
            if state.film_enabled {
                for (p, g) in state.film_gen.params.iter_mut().zip(g_film.iter()) {
                    *p -= lr * g;
                }
            }
        }
        OptimizerKind::Adam => {
            let t = episode + 1;
            state.opt_beta.step(&mut state.beta.values, &g_beta.values, lr, t);
            if state.film_enabled {
                state.opt_film.step(&mut state.film_gen.params, &g_film, lr, t);
            }
        }
    }
    state.episode += 1;

    if !state.all_finite() {
        return Err(Error::NonFiniteGradient {
            context: "meta update produced non-finite parameters".into(),
        });
    }
    Ok(())
}

/// Per-task evaluation output.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEvaluation {
    pub mse: f64,
    pub mae: f64,
    pub mape: Option<f64>,
    pub predictions: Vec<f64>,
}

/// Adapt on the support set, predict the query set with modulation applied,
/// and report MSE/MAE/MAPE with the predictions. Fully deterministic: no
/// dropout on either pass.
pub fn adapt_and_evaluate(
    state: &MetaState,
    task: &TaskDataset,
    z: &ProxyEncoding,
) -> Result<TaskEvaluation> {
    if task.support.is_empty() {
        return Err(Error::EmptySupport);
    }
    if task.query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let coeffs = state.coefficients_for(z)?;
    let adapted = adapt_params(state, task, coeffs.as_ref(), state.eval_inner_steps, None)?;

    let mut predictions = Vec::with_capacity(task.query.len());
    let mut targets = Vec::with_capacity(task.query.len());
    for obs in &task.query {
        let x = obs.x.flatten();
        let x = match coeffs.as_ref() {
            Some(c) => film_modulate(&x, c)?,
            None => x,
        };
        predictions.push(forward(&state.spec, &adapted, &x)?);
        targets.push(obs.y);
    }
    let record = compute_metrics(&predictions, &targets)?;
    Ok(TaskEvaluation {
        mse: record.mse,
        mae: record.mae,
        mape: record.mape,
        predictions,
    })
}

/// Deterministic train/validation split of task indices.
fn split_pools(n_tasks: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n_tasks).collect();
    let mut rng = rng_for(seed, &[SEED_POOLS]);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_val = ((n_tasks as f64) * val_fraction).floor() as usize;
    let n_val = n_val.min(n_tasks.saturating_sub(1));
    let val = order[..n_val].to_vec();
    let train = order[n_val..].to_vec();
    (train, val)
}

/// Proxy encodings for a set of target tasks, selected from the given pool.
pub fn proxy_encodings_for(
    targets: &[&TaskDataset],
    pool: &TaskUniverse,
    embeddings: &EmbeddingTable,
    delta: f64,
    include_target: bool,
) -> Result<Vec<ProxyEncoding>> {
    targets
        .iter()
        .map(|task| {
            let proxy = select_proxy(task.id, pool, embeddings, delta, include_target)?;
            Ok(encode_proxy(&proxy, pool, embeddings))
        })
        .collect()
}

struct TrainSetup {
    state: MetaState,
    train_tasks: Vec<TaskDataset>,
    val_tasks: Vec<TaskDataset>,
    train_encodings: Vec<ProxyEncoding>,
    val_encodings: Vec<ProxyEncoding>,
}

fn prepare_training(
    universe: &TaskUniverse,
    embeddings: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<TrainSetup> {
    config.validate()?;
    if universe.tasks.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let proxy_dim = embeddings.dim + 2;
    let state = MetaState::init(universe.feature_dim, proxy_dim, config)?;

    let (train_idx, val_idx) = split_pools(universe.tasks.len(), config.val_fraction, config.seed);
    let train_tasks: Vec<TaskDataset> = train_idx.iter().map(|&i| universe.tasks[i].clone()).collect();
    let val_tasks: Vec<TaskDataset> = val_idx.iter().map(|&i| universe.tasks[i].clone()).collect();

    // Proxies are selected from the training pool only; encodings are fixed
    // for the whole run because embeddings and the pool do not change. An
    // empty embedding table means no proxy information: every task gets the
    // zero encoding.
    let (train_encodings, val_encodings) = if config.film && !embeddings.vectors.is_empty() {
        let pool = TaskUniverse {
            tasks: train_tasks.clone(),
            products: universe.products.clone(),
            feature_dim: universe.feature_dim,
            rng_seed: universe.rng_seed,
        };
        let train_refs: Vec<&TaskDataset> = train_tasks.iter().collect();
        let val_refs: Vec<&TaskDataset> = val_tasks.iter().collect();
        (
            proxy_encodings_for(
                &train_refs,
                &pool,
                embeddings,
                config.proxy_delta,
                config.include_target_proxy,
            )?,
            proxy_encodings_for(
                &val_refs,
                &pool,
                embeddings,
                config.proxy_delta,
                config.include_target_proxy,
            )?,
        )
    } else {
        (
            vec![ProxyEncoding::zeros(proxy_dim); train_tasks.len()],
            vec![ProxyEncoding::zeros(proxy_dim); val_tasks.len()],
        )
    };

    Ok(TrainSetup {
        state,
        train_tasks,
        val_tasks,
        train_encodings,
        val_encodings,
    })
}

fn sample_batch(pool_len: usize, batch_size: usize, seed: u64, episode: u64) -> Vec<usize> {
    let take = batch_size.min(pool_len);
    let mut order: Vec<usize> = (0..pool_len).collect();
    let mut rng = rng_for(seed, &[SEED_EPISODE, episode]);
    for i in 0..take {
        let j = rng.random_range(i..pool_len);
        order.swap(i, j);
    }
    order.truncate(take);
    order
}

fn validation_mse(state: &MetaState, tasks: &[TaskDataset], encodings: &[ProxyEncoding]) -> Result<f64> {
    let mut total = 0.0;
    for (task, z) in tasks.iter().zip(encodings.iter()) {
        total += adapt_and_evaluate(state, task, z)?.mse;
    }
    Ok(total / tasks.len() as f64)
}

/// Episodic F-FOMAML training. Each episode samples a task batch without
/// replacement, adapts, and meta-updates; validation MSE is tracked every
/// `val_interval` episodes and the best-validation state is returned.
pub fn train_ffomaml(
    universe: &TaskUniverse,
    embeddings: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<MetaState> {
    train_ffomaml_observed(universe, embeddings, config, |_, _| {})
}

/// As `train_ffomaml`, invoking the observer after every episode.
pub fn train_ffomaml_observed(
    universe: &TaskUniverse,
    embeddings: &EmbeddingTable,
    config: &TrainConfig,
    mut observer: impl FnMut(u64, &MetaState),
) -> Result<MetaState> {
    let TrainSetup {
        mut state,
        train_tasks,
        val_tasks,
        train_encodings,
        val_encodings,
    } = prepare_training(universe, embeddings, config)?;

    let mut best: Option<(f64, MetaState)> = None;
    for episode in 0..config.episodes {
        let idx = sample_batch(train_tasks.len(), config.task_batch_size, config.seed, episode);
        let batch: Vec<(&TaskDataset, &ProxyEncoding)> = idx
            .iter()
            .map(|&i| (&train_tasks[i], &train_encodings[i]))
            .collect();
        meta_update(&mut state, &batch)?;
        observer(episode, &state);

        if config.val_interval > 0 && !val_tasks.is_empty() && (episode + 1) % config.val_interval == 0
        {
            let mse = validation_mse(&state, &val_tasks, &val_encodings)?;
            if best.as_ref().is_none_or(|(b, _)| mse < *b) {
                best = Some((mse, state.clone()));
            }
        }
    }
    Ok(best.map(|(_, s)| s).unwrap_or(state))
}

/// Reptile: several inner SGD steps per task, then interpolate the shared
/// initialization toward the adapted parameters.
fn train_reptile_observed(
    universe: &TaskUniverse,
    config: &TrainConfig,
    mut observer: impl FnMut(u64, &MetaState),
) -> Result<MetaState> {
    let mut cfg = config.clone();
    cfg.film = false;
    let TrainSetup {
        mut state,
        train_tasks,
        val_tasks,
        val_encodings,
        ..
    } = prepare_training(universe, &EmbeddingTable::empty(), &cfg)?;
    state.inner_steps = cfg.reptile_inner_steps;
    state.eval_inner_steps = cfg.reptile_inner_steps;

    let mut best: Option<(f64, MetaState)> = None;
    for episode in 0..cfg.episodes {
        let idx = sample_batch(train_tasks.len(), cfg.task_batch_size, cfg.seed, episode);
        let mut ordered: Vec<&TaskDataset> = idx.iter().map(|&i| &train_tasks[i]).collect();
        ordered.sort_by_key(|t| t.id);

        let mut delta = vec![0.0; state.beta.len()];
        for task in &ordered {
            if task.support.is_empty() {
                return Err(Error::EmptySupport);
            }
            let adapted = adapt_params(&state, task, None, cfg.reptile_inner_steps, Some(episode))?;
            for (d, (a, b)) in delta
                .iter_mut()
                .zip(adapted.values.iter().zip(state.beta.values.iter()))
            {
                *d += a - b;
            }
        }
        let mult = schedule_multiplier(episode, state.total_episodes, state.warmup_ratio);
        let step = cfg.reptile_outer_lr * mult / ordered.len() as f64;
        for (p, d) in state.beta.values.iter_mut().zip(delta.iter()) {
            *p += step * d;
        }
        state.episode += 1;
        if !state.all_finite() {
            return Err(Error::NonFiniteGradient {
                context: "reptile update".into(),
            });
        }
        observer(episode, &state);

        if cfg.val_interval > 0 && !val_tasks.is_empty() && (episode + 1) % cfg.val_interval == 0 {
            let mse = validation_mse(&state, &val_tasks, &val_encodings)?;
            if best.as_ref().is_none_or(|(b, _)| mse < *b) {
                best = Some((mse, state.clone()));
            }
        }
    }
    Ok(best.map(|(_, s)| s).unwrap_or(state))
}

/// A trained, evaluatable model: a meta-learned state or a per-task
/// baseline that fits on each task's support set at evaluation time.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Meta(MetaState),
    PerTask {
        kind: BaselineKind,
        config: TrainConfig,
        feature_dim: usize,
    },
}

impl TrainedModel {
    pub fn evaluate_task(&self, task: &TaskDataset, z: &ProxyEncoding) -> Result<TaskEvaluation> {
        match self {
            TrainedModel::Meta(state) => adapt_and_evaluate(state, task, z),
            TrainedModel::PerTask {
                kind,
                config,
                feature_dim,
            } => evaluate_per_task(*kind, config, *feature_dim, task),
        }
    }

    pub fn meta_state(&self) -> Option<&MetaState> {
        match self {
            TrainedModel::Meta(state) => Some(state),
            TrainedModel::PerTask { .. } => None,
        }
    }
}

/// Train a baseline. FOMAML is the same loop with the modulation path
/// forced off; per-task baselines defer fitting to evaluation time.
pub fn train_baseline(
    kind: BaselineKind,
    universe: &TaskUniverse,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    train_baseline_observed(kind, universe, config, |_, _| {})
}

pub fn train_baseline_observed(
    kind: BaselineKind,
    universe: &TaskUniverse,
    config: &TrainConfig,
    observer: impl FnMut(u64, &MetaState),
) -> Result<TrainedModel> {
    match kind {
        BaselineKind::Fomaml => {
            let mut cfg = config.clone();
            cfg.film = false;
            Ok(TrainedModel::Meta(train_ffomaml_observed(
                universe,
                &EmbeddingTable::empty(),
                &cfg,
                observer,
            )?))
        }
        BaselineKind::Reptile => Ok(TrainedModel::Meta(train_reptile_observed(
            universe, config, observer,
        )?)),
        BaselineKind::PerTaskLinear | BaselineKind::PerTaskMlp => Ok(TrainedModel::PerTask {
            kind,
            config: config.clone(),
            feature_dim: universe.feature_dim,
        }),
    }
}

fn evaluate_per_task(
    kind: BaselineKind,
    config: &TrainConfig,
    feature_dim: usize,
    task: &TaskDataset,
) -> Result<TaskEvaluation> {
    if task.support.is_empty() {
        return Err(Error::EmptySupport);
    }
    if task.query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let (spec, params) = match kind {
        BaselineKind::PerTaskLinear => {
            // Closed-form least squares with a bias column; ridge fallback
            // keeps underdetermined supports solvable.
            let rows: Vec<Vec<f64>> = task
                .support
                .iter()
                .map(|o| {
                    let mut row = o.x.flatten();
                    row.push(1.0);
                    row
                })
                .collect();
            let targets: Vec<f64> = task.support.iter().map(|o| o.y).collect();
            let coeffs = crate::linalg::least_squares(&Matrix::from_rows(rows), &targets, 1e-8);
            let spec = ModelSpec::linear(feature_dim);
            let params = ParamVector { values: coeffs };
            (spec, params)
        }
        BaselineKind::PerTaskMlp => {
            let spec = ModelSpec::mlp(feature_dim, &[config.hidden_size], 0.0);
            let seed = derive_seed(config.seed, &[SEED_PERTASK, task.id.seed_label()]);
            let mut params = init_params(&spec, seed)?;
            let mut opt = AdamState::new(params.len());
            for epoch in 0..config.pertask_epochs {
                let out = batch_backward(&spec, &params, &task.support, None, None, false)?;
                if !out.grad.all_finite() {
                    return Err(Error::NonFiniteGradient {
                        context: "per-task fit".into(),
                    });
                }
                opt.step(
                    &mut params.values,
                    &out.grad.values,
                    config.pertask_lr,
                    epoch as u64 + 1,
                );
            }
            (spec, params)
        }
        _ => unreachable!("meta baselines are handled by TrainedModel::Meta"),
    };

    let mut predictions = Vec::with_capacity(task.query.len());
    let mut targets = Vec::with_capacity(task.query.len());
    for obs in &task.query {
        predictions.push(forward(&spec, &params, &obs.x.flatten())?);
        targets.push(obs.y);
    }
    let record = compute_metrics(&predictions, &targets)?;
    Ok(TaskEvaluation {
        mse: record.mse,
        mae: record.mae,
        mape: record.mape,
        predictions,
    })
}

// --- checkpoint persistence -------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"FFMLCKPT";

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::MalformedFile {
                file: "<checkpoint>".into(),
                reason: "truncated".into(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}

/// Serialize the full state: architecture header, shared parameters,
/// generator parameters, optimizer moments, and counters. Round-trips
/// bitwise.
pub fn checkpoint_to_bytes(state: &MetaState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(match state.spec.kind {
        ModelKind::Linear => 0,
        ModelKind::Mlp => 1,
    });
    out.extend_from_slice(&state.spec.dropout_rate.to_le_bytes());
    out.extend_from_slice(&(state.spec.layer_sizes.len() as u32).to_le_bytes());
    for &s in &state.spec.layer_sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.push(state.film_enabled as u8);
    out.extend_from_slice(&state.episode.to_le_bytes());
    out.extend_from_slice(&state.total_episodes.to_le_bytes());
    out.extend_from_slice(&state.warmup_ratio.to_le_bytes());
    out.extend_from_slice(&state.inner_lr.to_le_bytes());
    out.extend_from_slice(&state.meta_lr.to_le_bytes());
    out.extend_from_slice(&(state.inner_steps as u32).to_le_bytes());
    out.extend_from_slice(&(state.eval_inner_steps as u32).to_le_bytes());
    out.push(match state.optimizer {
        OptimizerKind::Adam => 0,
        OptimizerKind::Sgd => 1,
    });
    out.extend_from_slice(&state.seed.to_le_bytes());
    push_f64s(&mut out, &state.beta.values);
    out.extend_from_slice(&(state.film_gen.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(state.film_gen.hidden_dim as u32).to_le_bytes());
    out.extend_from_slice(&(state.film_gen.feature_dim as u32).to_le_bytes());
    push_f64s(&mut out, &state.film_gen.params);
    push_f64s(&mut out, &state.opt_beta.m);
    push_f64s(&mut out, &state.opt_beta.v);
    push_f64s(&mut out, &state.opt_film.m);
    push_f64s(&mut out, &state.opt_film.v);
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<MetaState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::MalformedFile {
            file: "<checkpoint>".into(),
            reason: "bad magic".into(),
        });
    }
    let kind = match r.u8()? {
        0 => ModelKind::Linear,
        1 => ModelKind::Mlp,
        other => {
            return Err(Error::MalformedFile {
                file: "<checkpoint>".into(),
                reason: format!("unknown model kind {other}"),
            })
        }
    };
    let dropout_rate = r.f64()?;
    let n_sizes = r.u32()? as usize;
    let mut layer_sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        layer_sizes.push(r.u32()? as usize);
    }
    let film_enabled = r.u8()? != 0;
    let episode = r.u64()?;
    let total_episodes = r.u64()?;
    let warmup_ratio = r.f64()?;
    let inner_lr = r.f64()?;
    let meta_lr = r.f64()?;
    let inner_steps = r.u32()? as usize;
    let eval_inner_steps = r.u32()? as usize;
    let optimizer = match r.u8()? {
        0 => OptimizerKind::Adam,
        1 => OptimizerKind::Sgd,
        other => {
            return Err(Error::MalformedFile {
                file: "<checkpoint>".into(),
                reason: format!("unknown optimizer {other}"),
            })
        }
    };
    let seed = r.u64()?;
    let beta = ParamVector { values: r.f64s()? };
    let input_dim = r.u32()? as usize;
    let hidden_dim = r.u32()? as usize;
    let feature_dim = r.u32()? as usize;
    let film_params = r.f64s()?;
    let opt_beta = AdamState {
        m: r.f64s()?,
        v: r.f64s()?,
    };
    let opt_film = AdamState {
        m: r.f64s()?,
        v: r.f64s()?,
    };

    Ok(MetaState {
        spec: ModelSpec {
            kind,
            layer_sizes,
            activation: crate::model::Activation::Relu,
            dropout_rate,
        },
        beta,
        film_gen: FilmGenerator {
            input_dim,
            hidden_dim,
            feature_dim,
            params: film_params,
        },
        film_enabled,
        episode,
        total_episodes,
        warmup_ratio,
        inner_lr,
        meta_lr,
        inner_steps,
        eval_inner_steps,
        optimizer,
        opt_beta,
        opt_film,
        seed,
    })
}

pub fn save_checkpoint(state: &MetaState, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&checkpoint_to_bytes(state))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MetaState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}
