//! Numerical study of the threshold-weighted estimator: a generative task
//! family with Lipschitz-related task functions, per-task least-squares
//! learners, the distance-thresholded averaging estimator, Monte-Carlo
//! excess risk, and sweeps over the threshold and the task count with
//! bootstrap intervals.
//!
//! Task functions are linear in a fixed polynomial feature basis with
//! coefficients affine in the task feature `v`, scaled so the Lipschitz
//! relation `|h_a(u) - h_b(u)| <= C ||v_a - v_b||` holds with constant C.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{euclidean, least_squares, Matrix};
use crate::seeding::{derive_seed, rng_for};

const SEED_BASE: u64 = 0x60;
const SEED_TEST: u64 = 0x61;
const SEED_TASK: u64 = 0x62;
const SEED_MC: u64 = 0x63;
const SEED_BOOT: u64 = 0x64;

/// Dimension of the polynomial feature basis phi(u) = (1, u, u^2).
pub const PHI_DIM: usize = 3;

pub fn phi(u: f64) -> [f64; PHI_DIM] {
    [1.0, u, u * u]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TheoryLoss {
    Absolute,
}

/// Simulation parameters: T tasks of n samples each, task features in
/// [0,1]^r, sub-Gaussian (here Gaussian) noise, Lipschitz constant C, and
/// the neighbor threshold h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeConfig {
    pub task_count: usize,
    pub samples_per_task: usize,
    pub task_feature_dim: usize,
    pub noise_sigma: f64,
    pub lipschitz_c: f64,
    pub threshold_h: f64,
    pub mc_samples: usize,
    pub seed: u64,
    /// Candidate thresholds used when a sweep tunes h per point.
    pub h_tune_grid: Vec<f64>,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        GenerativeConfig {
            task_count: 100,
            samples_per_task: 20,
            task_feature_dim: 2,
            noise_sigma: 0.5,
            lipschitz_c: 1.0,
            threshold_h: 0.2,
            mc_samples: 10_000,
            seed: 0,
            h_tune_grid: vec![0.05, 0.08, 0.12, 0.18, 0.27, 0.4, 0.6, 0.9],
        }
    }
}

impl GenerativeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.task_count == 0 || self.samples_per_task == 0 || self.task_feature_dim == 0 {
            return Err(Error::InvalidConfig("counts must be positive".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise_sigma must be non-negative".into()));
        }
        if !(self.lipschitz_c.is_finite() && self.lipschitz_c >= 0.0) {
            return Err(Error::InvalidConfig("lipschitz_c must be non-negative".into()));
        }
        if self.threshold_h.is_nan() || self.threshold_h < 0.0 {
            return Err(Error::InvalidConfig("threshold_h must be non-negative".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be positive".into()));
        }
        Ok(())
    }
}

/// One simulated task: its feature vector, the true function coefficients
/// in the phi basis, and its (x, y) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryTask {
    pub v: Vec<f64>,
    pub coeffs: Vec<f64>,
    pub samples: Vec<(f64, f64)>,
}

impl TheoryTask {
    pub fn truth(&self, u: f64) -> f64 {
        crate::linalg::dot(&self.coeffs, &phi(u))
    }
}

/// The sampled family: T training tasks, one test task, and the shared
/// structure (base coefficients and the normalized mixing map).
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryUniverse {
    pub tasks: Vec<TheoryTask>,
    pub test_task: TheoryTask,
    pub base_coeffs: Vec<f64>,
    /// PHI_DIM x r map, scaled so sup_u ||M^T phi(u)|| = 1 (up to a small
    /// safety margin).
    pub mixing: Matrix,
    pub lipschitz_c: f64,
}

impl TheoryUniverse {
    /// True coefficients for a task at feature v: base + C * M v.
    pub fn coefficients_for(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.base_coeffs.clone();
        for row in 0..PHI_DIM {
            let mut acc = 0.0;
            for (j, &vj) in v.iter().enumerate() {
                acc += self.mixing.get(row, j) * vj;
            }
            out[row] += self.lipschitz_c * acc;
        }
        out
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sample_task(universe_coeffs: impl Fn(&[f64]) -> Vec<f64>, r: usize, n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> TheoryTask {
    let v: Vec<f64> = (0..r).map(|_| rng.random::<f64>()).collect();
    let coeffs = universe_coeffs(&v);
    let samples: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let x = rng.random::<f64>();
            let y = crate::linalg::dot(&coeffs, &phi(x)) + sigma * normal(rng);
            (x, y)
        })
        .collect();
    TheoryTask { v, coeffs, samples }
}

/// Draw the task family. The draw order (shared structure, test task, then
/// training tasks each from its own stream) makes universes nest: the first
/// T tasks for a seed are identical whatever the configured task count.
pub fn sample_theory_universe(config: &GenerativeConfig) -> Result<TheoryUniverse> {
    config.validate()?;
    let r = config.task_feature_dim;

    let mut base_rng = rng_for(config.seed, &[SEED_BASE]);
    let base_coeffs: Vec<f64> = (0..PHI_DIM).map(|_| normal(&mut base_rng)).collect();
    let mut mixing = Matrix::zeros(PHI_DIM, r);
    for v in mixing.data.iter_mut() {
        *v = normal(&mut base_rng);
    }
    // Scale so sup_u ||M^T phi(u)||_2 <= 1: then |dh| <= C ||dv|| exactly.
    let mut sup = 0.0f64;
    for k in 0..=1000 {
        let u = k as f64 / 1000.0;
        let p = phi(u);
        let mut norm_sq = 0.0;
        for j in 0..r {
            let mut acc = 0.0;
            for row in 0..PHI_DIM {
                acc += mixing.get(row, j) * p[row];
            }
            norm_sq += acc * acc;
        }
        sup = sup.max(norm_sq.sqrt());
    }
    mixing.scale(1.0 / (sup * 1.001));

    let shell = TheoryUniverse {
        tasks: Vec::new(),
        test_task: TheoryTask {
            v: vec![],
            coeffs: vec![],
            samples: vec![],
        },
        base_coeffs,
        mixing,
        lipschitz_c: config.lipschitz_c,
    };

    let mut test_rng = rng_for(config.seed, &[SEED_TEST]);
    let test_task = sample_task(
        |v| shell.coefficients_for(v),
        r,
        config.samples_per_task,
        config.noise_sigma,
        &mut test_rng,
    );

    let tasks: Vec<TheoryTask> = (0..config.task_count)
        .map(|i| {
            let mut rng = rng_for(config.seed, &[SEED_TASK, i as u64]);
            sample_task(
                |v| shell.coefficients_for(v),
                r,
                config.samples_per_task,
                config.noise_sigma,
                &mut rng,
            )
        })
        .collect();

    Ok(TheoryUniverse {
        tasks,
        test_task,
        ..shell
    })
}

/// A per-task learner: coefficients in the phi basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedLearner {
    pub coeffs: Vec<f64>,
}

impl FittedLearner {
    pub fn zero() -> Self {
        FittedLearner {
            coeffs: vec![0.0; PHI_DIM],
        }
    }

    pub fn predict(&self, u: f64) -> f64 {
        crate::linalg::dot(&self.coeffs, &phi(u))
    }
}

/// A fitted training task: its feature vector with its learner.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedTask {
    pub v: Vec<f64>,
    pub fit: FittedLearner,
}

/// Least-squares fit of the phi-basis coefficients on the task samples,
/// with a small ridge fallback for degenerate designs.
pub fn fit_task_learner(task: &TheoryTask) -> Result<FittedLearner> {
    if task.samples.len() < PHI_DIM + 1 {
        return Err(Error::InsufficientSamples {
            needed: PHI_DIM + 1,
            got: task.samples.len(),
        });
    }
    let rows: Vec<Vec<f64>> = task.samples.iter().map(|(x, _)| phi(*x).to_vec()).collect();
    let targets: Vec<f64> = task.samples.iter().map(|(_, y)| *y).collect();
    let coeffs = least_squares(&Matrix::from_rows(rows), &targets, 1e-8);
    Ok(FittedLearner { coeffs })
}

/// Uniform average of the learners whose task features lie within distance
/// h of the test feature; the zero function when no task qualifies.
pub fn weighted_estimator(v_test: &[f64], tasks: &[FittedTask], h: f64) -> FittedLearner {
    let mut acc = vec![0.0; PHI_DIM];
    let mut count = 0usize;
    for task in tasks {
        if euclidean(&task.v, v_test) <= h {
            for (a, c) in acc.iter_mut().zip(task.fit.coeffs.iter()) {
                *a += c;
            }
            count += 1;
        }
    }
    if count == 0 {
        return FittedLearner::zero();
    }
    for a in acc.iter_mut() {
        *a /= count as f64;
    }
    FittedLearner { coeffs: acc }
}

/// Members of the thresholded neighborhood, for oracle comparisons.
pub fn neighborhood(v_test: &[f64], tasks: &[FittedTask], h: f64) -> Vec<usize> {
    tasks
        .iter()
        .enumerate()
        .filter(|(_, t)| euclidean(&t.v, v_test) <= h)
        .map(|(i, _)| i)
        .collect()
}

/// Monte-Carlo excess risk of an estimator against the true task function:
/// E[l(estimate(x), y)] - E[l(truth(x), y)] over fresh draws, sharing the
/// random numbers between both terms.
pub fn excess_risk(
    estimate: &FittedLearner,
    truth: &TheoryTask,
    loss: TheoryLoss,
    noise_sigma: f64,
    mc_samples: usize,
    seed: u64,
) -> f64 {
    let TheoryLoss::Absolute = loss;
    let mut rng = rng_for(seed, &[SEED_MC]);
    let mut acc = 0.0;
    for _ in 0..mc_samples {
        let x = rng.random::<f64>();
        let true_val = truth.truth(x);
        let y = true_val + noise_sigma * normal(&mut rng);
        acc += (estimate.predict(x) - y).abs() - (true_val - y).abs();
    }
    acc / mc_samples as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    ThresholdH,
    TaskCountT,
}

/// Mean excess risk per grid point with bootstrap 95% intervals over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub axis: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl RiskCurve {
    /// Text table: a seeds header line then `axis mean lo hi` per row,
    /// in shortest round-trip decimal form.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# seeds");
        for s in &self.seeds {
            out.push(' ');
            out.push_str(&s.to_string());
        }
        out.push('\n');
        for i in 0..self.axis.len() {
            out.push_str(&format!(
                "{} {} {} {}\n",
                self.axis[i], self.mean[i], self.lo[i], self.hi[i]
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let fail = |reason: String| Error::MalformedFile {
            file: "<risk curve>".into(),
            reason,
        };
        let mut seeds = Vec::new();
        let mut axis = Vec::new();
        let mut mean = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# seeds") {
                seeds = rest
                    .split_whitespace()
                    .map(|p| p.parse::<u64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| fail(format!("line {}: {e}", no + 1)))?;
                continue;
            }
            let parts: Vec<f64> = line
                .split_whitespace()
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| fail(format!("line {}: {e}", no + 1)))?;
            if parts.len() != 4 {
                return Err(fail(format!("line {}: expected 4 columns", no + 1)));
            }
            axis.push(parts[0]);
            mean.push(parts[1]);
            lo.push(parts[2]);
            hi.push(parts[3]);
        }
        Ok(RiskCurve {
            axis,
            mean,
            lo,
            hi,
            seeds,
        })
    }
}

/// Percentile bootstrap interval for the mean (95%, 1000 resamples).
pub fn bootstrap_mean_ci(samples: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    assert!(!samples.is_empty());
    let mut rng = rng_for(seed, &[SEED_BOOT]);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = 0.0;
        for _ in 0..samples.len() {
            acc += samples[rng.random_range(0..samples.len())];
        }
        means.push(acc / samples.len() as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (pick(0.025), pick(0.975))
}

/// Per-seed excess risks at one (universe-config, h) cell, reusing fitted
/// learners. The Monte-Carlo stream depends only on the seed, so cells are
/// paired across grid points.
fn risks_at(
    fitted: &[(TheoryTask, Vec<FittedTask>)],
    h: f64,
    config: &GenerativeConfig,
    seeds: &[u64],
) -> Vec<f64> {
    fitted
        .iter()
        .zip(seeds.iter())
        .map(|((test_task, tasks), &seed)| {
            let estimate = weighted_estimator(&test_task.v, tasks, h);
            excess_risk(
                &estimate,
                test_task,
                TheoryLoss::Absolute,
                config.noise_sigma,
                config.mc_samples,
                derive_seed(seed, &[SEED_MC]),
            )
        })
        .collect()
}

fn fit_universes(config: &GenerativeConfig, seeds: &[u64]) -> Result<Vec<(TheoryTask, Vec<FittedTask>)>> {
    seeds
        .iter()
        .map(|&seed| {
            let cfg = GenerativeConfig {
                seed,
                ..config.clone()
            };
            let universe = sample_theory_universe(&cfg)?;
            let fitted: Result<Vec<FittedTask>> = universe
                .tasks
                .iter()
                .map(|t| {
                    Ok(FittedTask {
                        v: t.v.clone(),
                        fit: fit_task_learner(t)?,
                    })
                })
                .collect();
            Ok((universe.test_task, fitted?))
        })
        .collect()
}

/// Sweep the threshold h or the task count T. For the task-count axis, h is
/// tuned per grid point over `config.h_tune_grid` by mean excess risk.
/// Results are deterministic given the seed list.
pub fn sweep(
    axis: SweepAxis,
    grid: &[f64],
    config: &GenerativeConfig,
    seeds: &[u64],
) -> Result<RiskCurve> {
    config.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    let strictly_increasing = grid
        .windows(2)
        .all(|w| w[0].partial_cmp(&w[1]) == Some(std::cmp::Ordering::Less));
    if !strictly_increasing {
        return Err(Error::InvalidConfig("sweep grid must be strictly increasing".into()));
    }
    if seeds.len() < 10 {
        return Err(Error::InvalidConfig(format!(
            "sweeps need at least 10 seeds, got {}",
            seeds.len()
        )));
    }

    let mut mean = Vec::with_capacity(grid.len());
    let mut lo = Vec::with_capacity(grid.len());
    let mut hi = Vec::with_capacity(grid.len());

    match axis {
        SweepAxis::ThresholdH => {
            let fitted = fit_universes(config, seeds)?;
            for (gi, &h) in grid.iter().enumerate() {
                if h < 0.0 {
                    return Err(Error::InvalidConfig("threshold grid must be non-negative".into()));
                }
                let risks = risks_at(&fitted, h, config, seeds);
                let m = risks.iter().sum::<f64>() / risks.len() as f64;
                let (l, u) = bootstrap_mean_ci(
                    &risks,
                    1000,
                    derive_seed(config.seed, &[SEED_BOOT, gi as u64]),
                );
                mean.push(m);
                lo.push(l);
                hi.push(u);
            }
        }
        SweepAxis::TaskCountT => {
            for (gi, &t_value) in grid.iter().enumerate() {
                if t_value < 1.0 || t_value.fract() != 0.0 {
                    return Err(Error::InvalidConfig(
                        "task-count grid must hold positive integers".into(),
                    ));
                }
                let cfg = GenerativeConfig {
                    task_count: t_value as usize,
                    ..config.clone()
                };
                let fitted = fit_universes(&cfg, seeds)?;
                // Tune h by mean risk at this grid point.
                let mut best: Option<(f64, Vec<f64>)> = None;
                for &h in &config.h_tune_grid {
                    let risks = risks_at(&fitted, h, &cfg, seeds);
                    let m = risks.iter().sum::<f64>() / risks.len() as f64;
                    if best.as_ref().is_none_or(|(bm, _)| m < *bm) {
                        best = Some((m, risks));
                    }
                }
                let (m, risks) = best.expect("h_tune_grid must be non-empty");
                let (l, u) = bootstrap_mean_ci(
                    &risks,
                    1000,
                    derive_seed(config.seed, &[SEED_BOOT, gi as u64]),
                );
                mean.push(m);
                lo.push(l);
                hi.push(u);
            }
        }
    }

    Ok(RiskCurve {
        axis: grid.to_vec(),
        mean,
        lo,
        hi,
        seeds: seeds.to_vec(),
    })
}

/// Least-squares slope of ln(y) against ln(x); used to check decay rates.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(ly.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_heterogeneity_makes_tasks_identical() {
        let config = GenerativeConfig {
            task_count: 8,
            lipschitz_c: 0.0,
            seed: 3,
            ..GenerativeConfig::default()
        };
        let universe = sample_theory_universe(&config).unwrap();
        for task in &universe.tasks {
            assert_eq!(task.coeffs, universe.base_coeffs);
        }
        assert_eq!(universe.test_task.coeffs, universe.base_coeffs);
    }

    #[test]
    fn equal_task_features_give_equal_functions() {
        let config = GenerativeConfig {
            seed: 4,
            ..GenerativeConfig::default()
        };
        let universe = sample_theory_universe(&config).unwrap();
        let v = vec![0.3, 0.8];
        assert_eq!(universe.coefficients_for(&v), universe.coefficients_for(&v));
        // And distance zero implies identical functions pointwise.
        let c = universe.coefficients_for(&v);
        for k in 0..10 {
            let u = k as f64 / 9.0;
            let a = crate::linalg::dot(&c, &phi(u));
            let b = crate::linalg::dot(&universe.coefficients_for(&v), &phi(u));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn lipschitz_audit_over_random_triples() {
        let config = GenerativeConfig {
            lipschitz_c: 1.0,
            seed: 11,
            ..GenerativeConfig::default()
        };
        let universe = sample_theory_universe(&config).unwrap();
        let mut rng = rng_for(99, &[]);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let v1: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
            let v2: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
            let u = rng.random::<f64>();
            let h1 = crate::linalg::dot(&universe.coefficients_for(&v1), &phi(u));
            let h2 = crate::linalg::dot(&universe.coefficients_for(&v2), &phi(u));
            let dv = euclidean(&v1, &v2);
            if dv > 0.0 {
                worst = worst.max((h1 - h2).abs() / dv);
            }
        }
        assert!(
            worst <= universe.lipschitz_c,
            "Lipschitz audit failed: ratio {worst}"
        );
    }

    #[test]
    fn universes_nest_across_task_counts() {
        let small = sample_theory_universe(&GenerativeConfig {
            task_count: 10,
            seed: 5,
            ..GenerativeConfig::default()
        })
        .unwrap();
        let large = sample_theory_universe(&GenerativeConfig {
            task_count: 50,
            seed: 5,
            ..GenerativeConfig::default()
        })
        .unwrap();
        assert_eq!(small.tasks[..], large.tasks[..10]);
        assert_eq!(small.test_task, large.test_task);
    }

    #[test]
    fn noiseless_fit_recovers_coefficients() {
        let config = GenerativeConfig {
            noise_sigma: 0.0,
            samples_per_task: 12,
            task_count: 3,
            seed: 8,
            ..GenerativeConfig::default()
        };
        let universe = sample_theory_universe(&config).unwrap();
        for task in &universe.tasks {
            let fit = fit_task_learner(task).unwrap();
            for (a, b) in fit.coeffs.iter().zip(task.coeffs.iter()) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn constant_zero_targets_fit_zero() {
        let task = TheoryTask {
            v: vec![0.5],
            coeffs: vec![0.0; PHI_DIM],
            samples: (0..10).map(|k| (k as f64 / 9.0, 0.0)).collect(),
        };
        let fit = fit_task_learner(&task).unwrap();
        assert!(fit.coeffs.iter().all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn fit_rejects_insufficient_samples() {
        let task = TheoryTask {
            v: vec![0.5],
            coeffs: vec![0.0; PHI_DIM],
            samples: vec![(0.1, 1.0), (0.5, 2.0), (0.9, 0.5)],
        };
        assert!(matches!(
            fit_task_learner(&task),
            Err(Error::InsufficientSamples { needed: 4, got: 3 })
        ));
    }

    /// Squared prediction error integrated over x ~ U[0,1], in closed form
    /// via the exact moment matrix of phi. Oracle for the O(1/n) decay.
    fn integrated_sq_error(fit: &FittedLearner, truth: &[f64]) -> f64 {
        let moments = [
            [1.0, 1.0 / 2.0, 1.0 / 3.0],
            [1.0 / 2.0, 1.0 / 3.0, 1.0 / 4.0],
            [1.0 / 3.0, 1.0 / 4.0, 1.0 / 5.0],
        ];
        let d: Vec<f64> = fit.coeffs.iter().zip(truth.iter()).map(|(a, b)| a - b).collect();
        let mut acc = 0.0;
        for i in 0..PHI_DIM {
            for j in 0..PHI_DIM {
                acc += d[i] * moments[i][j] * d[j];
            }
        }
        acc
    }

    #[test]
    fn fit_error_decays_like_one_over_n() {
        let mean_err = |n: usize| -> f64 {
            let mut acc = 0.0;
            for seed in 0..50u64 {
                let config = GenerativeConfig {
                    task_count: 1,
                    samples_per_task: n,
                    noise_sigma: 0.5,
                    seed,
                    ..GenerativeConfig::default()
                };
                let universe = sample_theory_universe(&config).unwrap();
                let fit = fit_task_learner(&universe.tasks[0]).unwrap();
                acc += integrated_sq_error(&fit, &universe.tasks[0].coeffs);
            }
            acc / 50.0
        };
        let at_n = mean_err(20);
        let at_4n = mean_err(80);
        let ratio = at_n / at_4n;
        assert!(
            (2.5..=6.0).contains(&ratio),
            "error ratio {ratio} outside [2.5, 6]"
        );
    }

    fn fitted_from(vs: &[Vec<f64>], coeffs: &[Vec<f64>]) -> Vec<FittedTask> {
        vs.iter()
            .zip(coeffs.iter())
            .map(|(v, c)| FittedTask {
                v: v.clone(),
                fit: FittedLearner { coeffs: c.clone() },
            })
            .collect()
    }

    #[test]
    fn estimator_empty_neighborhood_is_zero_function() {
        let tasks = fitted_from(&[vec![0.9, 0.9]], &[vec![1.0, 2.0, 3.0]]);
        let est = weighted_estimator(&[0.0, 0.0], &tasks, 0.1);
        assert_eq!(est.coeffs, vec![0.0; PHI_DIM]);
        for k in 0..5 {
            assert_eq!(est.predict(k as f64 / 4.0), 0.0);
        }
    }

    #[test]
    fn estimator_singleton_and_pair_averages() {
        let tasks = fitted_from(
            &[vec![0.0, 0.0], vec![0.1, 0.0], vec![0.9, 0.9]],
            &[
                vec![1.0, 2.0, 3.0],
                vec![3.0, 0.0, 1.0],
                vec![100.0, 100.0, 100.0],
            ],
        );
        // Only the first task is within 0.05.
        let est = weighted_estimator(&[0.0, 0.0], &tasks, 0.05);
        assert_eq!(est.coeffs, vec![1.0, 2.0, 3.0]);
        // First two within 0.2: coefficients average.
        let est = weighted_estimator(&[0.0, 0.0], &tasks, 0.2);
        assert_eq!(est.coeffs, vec![2.0, 1.0, 2.0]);
    }

    #[test]
    fn estimator_nesting_in_h() {
        let config = GenerativeConfig {
            task_count: 40,
            seed: 13,
            ..GenerativeConfig::default()
        };
        let universe = sample_theory_universe(&config).unwrap();
        let tasks: Vec<FittedTask> = universe
            .tasks
            .iter()
            .map(|t| FittedTask {
                v: t.v.clone(),
                fit: fit_task_learner(t).unwrap(),
            })
            .collect();
        let mut prev: Option<Vec<usize>> = None;
        for h in [0.0, 0.1, 0.2, 0.4, 0.8, f64::INFINITY] {
            let members = neighborhood(&universe.test_task.v, &tasks, h);
            if let Some(p) = &prev {
                assert!(p.iter().all(|i| members.contains(i)), "nesting violated");
            }
            prev = Some(members);
        }
        // h = infinity pools everything.
        assert_eq!(prev.unwrap().len(), 40);
    }

    #[test]
    fn infinite_h_equals_global_average() {
        let tasks = fitted_from(
            &[vec![0.1], vec![0.5], vec![0.9]],
            &[vec![3.0, 0.0, 0.0], vec![0.0, 3.0, 0.0], vec![0.0, 0.0, 3.0]],
        );
        let est = weighted_estimator(&[0.5], &tasks, f64::INFINITY);
        assert_eq!(est.coeffs, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn excess_risk_zero_for_exact_estimator() {
        let config = GenerativeConfig {
            seed: 2,
            ..GenerativeConfig::default()
        };
        let universe = sample_theory_universe(&config).unwrap();
        let est = FittedLearner {
            coeffs: universe.test_task.coeffs.clone(),
        };
        let risk = excess_risk(&est, &universe.test_task, TheoryLoss::Absolute, 0.5, 5000, 1);
        assert_eq!(risk, 0.0);
    }

    #[test]
    fn excess_risk_constant_offset_noiseless() {
        let config = GenerativeConfig {
            noise_sigma: 0.0,
            seed: 6,
            ..GenerativeConfig::default()
        };
        let universe = sample_theory_universe(&config).unwrap();
        let delta = 0.37;
        let mut coeffs = universe.test_task.coeffs.clone();
        coeffs[0] += delta;
        let est = FittedLearner { coeffs };
        let risk = excess_risk(&est, &universe.test_task, TheoryLoss::Absolute, 0.0, 2000, 1);
        assert!((risk - delta).abs() < 1e-12);
    }

    #[test]
    fn excess_risk_nearly_non_negative() {
        let config = GenerativeConfig {
            seed: 9,
            task_count: 20,
            ..GenerativeConfig::default()
        };
        let universe = sample_theory_universe(&config).unwrap();
        let tasks: Vec<FittedTask> = universe
            .tasks
            .iter()
            .map(|t| FittedTask {
                v: t.v.clone(),
                fit: fit_task_learner(t).unwrap(),
            })
            .collect();
        for h in [0.05, 0.2, 0.5, f64::INFINITY] {
            let est = weighted_estimator(&universe.test_task.v, &tasks, h);
            let risk = excess_risk(
                &est,
                &universe.test_task,
                TheoryLoss::Absolute,
                config.noise_sigma,
                10_000,
                3,
            );
            // Monte-Carlo noise bound: 3 standard errors of the paired
            // difference is far below 0.05 at 10k samples.
            assert!(risk > -0.05, "h={h}: excess risk {risk}");
        }
    }

    #[test]
    fn zero_heterogeneity_risk_non_increasing_in_h() {
        // With C = 0 every task shares the same function, so widening the
        // neighborhood only averages away fit noise.
        let seeds: Vec<u64> = (0..30).collect();
        let config = GenerativeConfig {
            task_count: 60,
            lipschitz_c: 0.0,
            noise_sigma: 0.5,
            ..GenerativeConfig::default()
        };
        let fitted = fit_universes(&config, &seeds).unwrap();
        let grid = [0.15, 0.4, 1.0];
        let means: Vec<f64> = grid
            .iter()
            .map(|&h| {
                let risks = risks_at(&fitted, h, &config, &seeds);
                risks.iter().sum::<f64>() / risks.len() as f64
            })
            .collect();
        assert!(means[0] >= means[1] - 2e-3, "{means:?}");
        assert!(means[1] >= means[2] - 2e-3, "{means:?}");
    }

    #[test]
    fn sweep_is_deterministic_and_serializes_exactly() {
        let seeds: Vec<u64> = (0..10).collect();
        let config = GenerativeConfig {
            task_count: 30,
            mc_samples: 2000,
            ..GenerativeConfig::default()
        };
        let grid = [0.1, 0.3, 0.6];
        let a = sweep(SweepAxis::ThresholdH, &grid, &config, &seeds).unwrap();
        let b = sweep(SweepAxis::ThresholdH, &grid, &config, &seeds).unwrap();
        assert_eq!(a, b);

        let text = a.to_text();
        let restored = RiskCurve::from_text(&text).unwrap();
        assert_eq!(a, restored);
        assert_eq!(text, restored.to_text());

        // Intervals contain their means; axis strictly increasing.
        for i in 0..a.axis.len() {
            assert!(a.lo[i] <= a.mean[i] && a.mean[i] <= a.hi[i]);
        }
        assert!(a.axis.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sweep_validates_inputs() {
        let seeds: Vec<u64> = (0..10).collect();
        let config = GenerativeConfig::default();
        assert!(sweep(SweepAxis::ThresholdH, &[], &config, &seeds).is_err());
        assert!(sweep(SweepAxis::ThresholdH, &[0.3, 0.1], &config, &seeds).is_err());
        assert!(sweep(SweepAxis::ThresholdH, &[0.1, 0.3], &config, &seeds[..5]).is_err());
        assert!(sweep(SweepAxis::TaskCountT, &[10.0, 100.5], &config, &seeds).is_err());
    }

    #[test]
    fn tuned_threshold_beats_extremes_small_instance() {
        let seeds: Vec<u64> = (0..12).collect();
        let config = GenerativeConfig {
            task_count: 300,
            samples_per_task: 20,
            noise_sigma: 0.5,
            lipschitz_c: 1.0,
            mc_samples: 4000,
            ..GenerativeConfig::default()
        };
        let fitted = fit_universes(&config, &seeds).unwrap();
        let mean_at = |h: f64| {
            let risks = risks_at(&fitted, h, &config, &seeds);
            risks.iter().sum::<f64>() / risks.len() as f64
        };
        let tuned = config
            .h_tune_grid
            .iter()
            .map(|&h| mean_at(h))
            .fold(f64::INFINITY, f64::min);
        assert!(tuned < mean_at(0.0), "tuned {tuned} vs h=0 {}", mean_at(0.0));
        assert!(
            tuned < mean_at(f64::INFINITY),
            "tuned {tuned} vs pooled {}",
            mean_at(f64::INFINITY)
        );
    }
}
