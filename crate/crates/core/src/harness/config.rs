//! Flat `key = value` configuration files: UTF-8, one pair per line,
//! `#` starts a comment. Typed getters feed the per-stage configs.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::GcnConfig;
use crate::meta::{OptimizerKind, TrainConfig};
use crate::model::ModelKind;
use crate::task::SynthConfig;
use crate::theory::GenerativeConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn new() -> Self {
        FlatConfig::default()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", no + 1))
            })?;
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FlatConfig { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.entries.clone()
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                Error::InvalidConfig(format!("key {key}: cannot parse {raw:?}: {e}"))
            }),
        }
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.parse::<f64>(key)?.unwrap_or(default))
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.parse::<usize>(key)?.unwrap_or(default))
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self.parse::<u64>(key)?.unwrap_or(default))
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.entries.get(key).map(|s| s.as_str()) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(other) => Err(Error::InvalidConfig(format!(
                "key {key}: expected a boolean, got {other:?}"
            ))),
        }
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(|p| {
                    let p = p.trim();
                    if p.eq_ignore_ascii_case("inf") {
                        Ok(f64::INFINITY)
                    } else {
                        p.parse::<f64>().map_err(|e| {
                            Error::InvalidConfig(format!("key {key}: bad number {p:?}: {e}"))
                        })
                    }
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let d = SynthConfig::default();
        Ok(SynthConfig {
            n_products: self.get_usize("synth.n_products", d.n_products)?,
            envs_per_product: self.get_usize("synth.envs_per_product", d.envs_per_product)?,
            samples_per_task: self.get_usize("synth.samples_per_task", d.samples_per_task)?,
            k_shot: self.get_usize("synth.k_shot", d.k_shot)?,
            product_dim: self.get_usize("synth.product_dim", d.product_dim)?,
            env_dim: self.get_usize("synth.env_dim", d.env_dim)?,
            noise_sigma: self.get_f64("synth.noise_sigma", d.noise_sigma)?,
            n_clusters: self.get_usize("synth.n_clusters", d.n_clusters)?,
            price_min: self.get_f64("synth.price_min", d.price_min)?,
            price_max: self.get_f64("synth.price_max", d.price_max)?,
            coeff_spread: self.get_f64("synth.coeff_spread", d.coeff_spread)?,
            feature_jitter: self.get_f64("synth.feature_jitter", d.feature_jitter)?,
            clip_negative_demand: self.get_bool("synth.clip_negative_demand", d.clip_negative_demand)?,
            history_days: self.get_usize("synth.history_days", d.history_days)?,
        })
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let model_kind = match self.get("train.model").unwrap_or("mlp") {
            "linear" => ModelKind::Linear,
            "mlp" => ModelKind::Mlp,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "train.model must be linear or mlp, got {other:?}"
                )))
            }
        };
        let optimizer = match self.get("train.optimizer").unwrap_or("adam") {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "train.optimizer must be adam or sgd, got {other:?}"
                )))
            }
        };
        Ok(TrainConfig {
            inner_lr: self.get_f64("train.inner_lr", d.inner_lr)?,
            meta_lr: self.get_f64("train.meta_lr", d.meta_lr)?,
            k_shot: self.get_usize("train.k_shot", d.k_shot)?,
            episodes: self.get_u64("train.episodes", d.episodes)?,
            warmup_ratio: self.get_f64("train.warmup_ratio", d.warmup_ratio)?,
            dropout_rate: self.get_f64("train.dropout_rate", d.dropout_rate)?,
            hidden_size: self.get_usize("train.hidden_size", d.hidden_size)?,
            seed,
            task_batch_size: self.get_usize("train.task_batch_size", d.task_batch_size)?,
            inner_steps: self.get_usize("train.inner_steps", d.inner_steps)?,
            model_kind,
            optimizer,
            film: self.get_bool("train.film", d.film)?,
            proxy_delta: self.get_f64("train.proxy_delta", d.proxy_delta)?,
            include_target_proxy: self.get_bool("train.include_target_proxy", d.include_target_proxy)?,
            val_fraction: self.get_f64("train.val_fraction", d.val_fraction)?,
            val_interval: self.get_u64("train.val_interval", d.val_interval)?,
            reptile_inner_steps: self.get_usize("train.reptile_inner_steps", d.reptile_inner_steps)?,
            reptile_outer_lr: self.get_f64("train.reptile_outer_lr", d.reptile_outer_lr)?,
            pertask_epochs: self.get_usize("train.pertask_epochs", d.pertask_epochs)?,
            pertask_lr: self.get_f64("train.pertask_lr", d.pertask_lr)?,
        })
    }

    pub fn gcn_config(&self) -> Result<GcnConfig> {
        let d = GcnConfig::default();
        Ok(GcnConfig {
            static_dim: self.get_usize("gcn.static_dim", d.static_dim)?,
            dynamic_dim: self.get_usize("gcn.dynamic_dim", d.dynamic_dim)?,
            graph_dim: self.get_usize("gcn.graph_dim", d.graph_dim)?,
            context_days: self.get_usize("gcn.context_days", d.context_days)?,
            epochs: self.get_usize("gcn.epochs", d.epochs)?,
            learning_rate: self.get_f64("gcn.learning_rate", d.learning_rate)?,
        })
    }

    pub fn theory_config(&self, seed: u64) -> Result<GenerativeConfig> {
        let d = GenerativeConfig::default();
        Ok(GenerativeConfig {
            task_count: self.get_usize("theory.task_count", d.task_count)?,
            samples_per_task: self.get_usize("theory.samples_per_task", d.samples_per_task)?,
            task_feature_dim: self.get_usize("theory.task_feature_dim", d.task_feature_dim)?,
            noise_sigma: self.get_f64("theory.noise_sigma", d.noise_sigma)?,
            lipschitz_c: self.get_f64("theory.lipschitz_c", d.lipschitz_c)?,
            threshold_h: self.get_f64("theory.threshold_h", d.threshold_h)?,
            mc_samples: self.get_usize("theory.mc_samples", d.mc_samples)?,
            seed,
            h_tune_grid: self.get_f64_list("theory.h_tune_grid")?.unwrap_or(d.h_tune_grid),
        })
    }
}
