//! Command-line interface. Every run writes a manifest into the output
//! directory and appends any metric records to `<out>/results.jsonl`.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::graph::{build_brand_graph, train_gcn_forecaster, EmbeddingTable, NodeHistory};
use crate::harness::ablate::ablate_kshot;
use crate::harness::config::FlatConfig;
use crate::harness::experiment::{
    evaluate_pool, evaluation_encodings, split_test_pool, train_method, Method,
};
use crate::harness::ingest::{ingest_jd, ingest_vending, IngestOptions, JdPaths, VendingPaths};
use crate::harness::manifest::{append_results, now_unix, RunManifest};
use crate::harness::metrics::MetricsRecord;
use crate::harness::plot::{write_curve_svg, write_curve_table, CurvePoint};
use crate::meta::{load_checkpoint, save_checkpoint, TrainedModel};
use crate::task::{generate_synthetic_universe, TaskUniverse};
use crate::theory::{sweep, SweepAxis};

#[derive(Parser)]
#[command(
    name = "ffomaml",
    about = "Few-shot demand forecasting: meta-learning with feature modulation, graph proxy selection, and a risk simulator",
    version
)]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base random seed for the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for manifests, results, and artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task universe and write universe.json.
    Synth,
    /// Train the graph forecaster on a universe and write embeddings.txt.
    Embed {
        #[arg(long)]
        universe: PathBuf,
    },
    /// Train a method on a universe and evaluate it on the held-out pool.
    Train {
        /// ffomaml | fomaml | reptile | linear | mlp
        #[arg(long)]
        method: String,
        #[arg(long)]
        universe: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a universe's held-out pool.
    Eval {
        #[arg(long)]
        universe: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Ingest the e-commerce CSV trio into train/test universes.
    IngestJd {
        #[arg(long)]
        sku: PathBuf,
        #[arg(long)]
        users: PathBuf,
        #[arg(long)]
        orders: PathBuf,
    },
    /// Ingest the vending-machine CSV quartet into train/test universes.
    IngestVending {
        #[arg(long)]
        sales: PathBuf,
        #[arg(long)]
        experiment: PathBuf,
        #[arg(long)]
        product: PathBuf,
        #[arg(long)]
        shelf: PathBuf,
    },
    /// Sweep the risk simulator over a threshold (h) or task-count (T) grid.
    Theory {
        /// h | T
        #[arg(long)]
        axis: String,
        /// Comma-separated grid values; `inf` is allowed on the h axis.
        #[arg(long)]
        grid: String,
    },
    /// k-shot ablation over a universe.
    AblateK {
        #[arg(long)]
        universe: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Comma-separated, strictly increasing k values.
        #[arg(long)]
        grid: String,
    },
}

/// Entry point taking argv (including the program name); returns the
/// process exit code.
pub fn run_cli(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders --help/--version as "errors" with exit code 0.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<FlatConfig> {
    match path {
        Some(p) => FlatConfig::from_file(p),
        None => Ok(FlatConfig::new()),
    }
}

fn load_universe(path: &Path) -> Result<TaskUniverse> {
    TaskUniverse::from_json(&std::fs::read_to_string(path)?)
}

fn load_embeddings(path: &Option<PathBuf>) -> Result<EmbeddingTable> {
    match path {
        Some(p) => EmbeddingTable::from_text(&std::fs::read_to_string(p)?),
        None => Ok(EmbeddingTable::empty()),
    }
}

fn write_universe(universe: &TaskUniverse, path: &Path) -> Result<()> {
    std::fs::write(path, universe.to_json()?)?;
    Ok(())
}

fn parse_grid_f64(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|p| {
            let p = p.trim();
            if p.eq_ignore_ascii_case("inf") {
                Ok(f64::INFINITY)
            } else {
                p.parse::<f64>()
                    .map_err(|e| Error::InvalidConfig(format!("bad grid value {p:?}: {e}")))
            }
        })
        .collect()
}

fn parse_grid_usize(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| Error::InvalidConfig(format!("bad grid value {p:?}: {e}")))
        })
        .collect()
}

fn stamp(records: &mut [MetricsRecord], seed: u64) {
    let now = now_unix();
    for r in records.iter_mut() {
        r.seed = seed;
        r.timestamp = now;
    }
}

fn execute(cli: Cli) -> Result<()> {
    let config = load_config(&cli.config)?;
    let seed = match cli.seed {
        Some(s) => s,
        None => config.get_u64("seed", 0)?,
    };
    let out = cli.out.clone();
    std::fs::create_dir_all(&out)?;

    match &cli.command {
        Command::Synth => {
            let mut manifest = RunManifest::new("synth", seed, config.snapshot());
            let synth = config.synth_config()?;
            let universe = generate_synthetic_universe(&synth, seed)?;
            let path = out.join("universe.json");
            write_universe(&universe, &path)?;
            manifest.record_output(&path);
            manifest.write(&out)?;
            println!(
                "wrote {} ({} tasks, feature dim {})",
                path.display(),
                universe.tasks.len(),
                universe.feature_dim
            );
        }

        Command::Embed { universe } => {
            let mut manifest = RunManifest::new("embed", seed, config.snapshot());
            manifest.record_input(universe)?;
            let loaded = load_universe(universe)?;
            if loaded.products.is_empty() {
                return Err(Error::InvalidConfig(
                    "universe has no product table to embed".into(),
                ));
            }
            let labels: Vec<String> = loaded.products.iter().map(|p| p.brand.clone()).collect();
            let graph = build_brand_graph(&labels);
            let histories: Vec<NodeHistory> = loaded.products.iter().map(NodeHistory::from).collect();
            let gcn_config = config.gcn_config()?;
            let result = train_gcn_forecaster(&graph, &histories, &gcn_config, seed)?;
            let path = out.join("embeddings.txt");
            std::fs::write(&path, result.embeddings.to_text())?;
            manifest.record_output(&path);
            manifest.write(&out)?;
            println!(
                "wrote {} ({} nodes, dim {}, final MAE {:.6})",
                path.display(),
                result.embeddings.vectors.len(),
                result.embeddings.dim,
                result.epoch_losses.last().unwrap_or(&f64::NAN)
            );
        }

        Command::Train {
            method,
            universe,
            embeddings,
        } => {
            let mut manifest = RunManifest::new("train", seed, config.snapshot());
            manifest.record_input(universe)?;
            if let Some(e) = embeddings {
                manifest.record_input(e)?;
            }
            let method = Method::parse(method)?;
            let loaded = load_universe(universe)?;
            let table = load_embeddings(embeddings)?;
            let test_fraction = config.get_f64("split.test_fraction", 0.25)?;
            let (train_pool, test_tasks) = split_test_pool(&loaded, test_fraction);
            let train_config = config.train_config(seed)?;

            let model = train_method(method, &train_pool, &table, &train_config)?;
            if let Some(state) = model.meta_state() {
                let path = out.join("checkpoint.bin");
                save_checkpoint(state, &path)?;
                manifest.record_output(&path);
            }

            let encodings =
                evaluation_encodings(&model, &test_tasks, &train_pool, &table, &train_config)?;
            let mut record = evaluate_pool(&model, &test_tasks, &encodings)?
                .with_method(method.name());
            stamp(std::slice::from_mut(&mut record), seed);
            let results = append_results(&out, &[record.clone()])?;
            manifest.record_output(&results);
            manifest.write(&out)?;
            println!(
                "{}",
                crate::harness::metrics::format_metrics_row(
                    method.name(),
                    record.mse,
                    record.mae,
                    record.mape
                )
            );
        }

        Command::Eval {
            universe,
            checkpoint,
            embeddings,
        } => {
            let mut manifest = RunManifest::new("eval", seed, config.snapshot());
            manifest.record_input(universe)?;
            manifest.record_input(checkpoint)?;
            let loaded = load_universe(universe)?;
            let table = load_embeddings(embeddings)?;
            let state = load_checkpoint(checkpoint)?;
            let label = if state.film_enabled { "eval-ffomaml" } else { "eval-fomaml" };
            let model = TrainedModel::Meta(state);
            let test_fraction = config.get_f64("split.test_fraction", 0.25)?;
            let (train_pool, test_tasks) = split_test_pool(&loaded, test_fraction);
            let train_config = config.train_config(seed)?;
            let encodings =
                evaluation_encodings(&model, &test_tasks, &train_pool, &table, &train_config)?;
            let mut record = evaluate_pool(&model, &test_tasks, &encodings)?.with_method(label);
            stamp(std::slice::from_mut(&mut record), seed);
            let results = append_results(&out, &[record.clone()])?;
            manifest.record_output(&results);
            manifest.write(&out)?;
            println!(
                "{}",
                crate::harness::metrics::format_metrics_row(label, record.mse, record.mae, record.mape)
            );
        }

        Command::IngestJd { sku, users, orders } => {
            let mut manifest = RunManifest::new("ingest-jd", seed, config.snapshot());
            for p in [sku, users, orders] {
                manifest.record_input(p)?;
            }
            let options = IngestOptions {
                k_shot: config.get_usize("ingest.k_shot", 5)?,
                category_column: config
                    .get("jd.category_column")
                    .unwrap_or("attribute1")
                    .to_string(),
            };
            let split = ingest_jd(
                &JdPaths {
                    sku,
                    users,
                    orders,
                },
                &options,
            )?;
            let train_path = out.join("universe_train.json");
            let test_path = out.join("universe_test.json");
            write_universe(&split.train, &train_path)?;
            write_universe(&split.test, &test_path)?;
            manifest.record_output(&train_path);
            manifest.record_output(&test_path);
            manifest.write(&out)?;
            println!(
                "wrote {} ({} tasks) and {} ({} tasks)",
                train_path.display(),
                split.train.tasks.len(),
                test_path.display(),
                split.test.tasks.len()
            );
        }

        Command::IngestVending {
            sales,
            experiment,
            product,
            shelf,
        } => {
            let mut manifest = RunManifest::new("ingest-vending", seed, config.snapshot());
            for p in [sales, experiment, product, shelf] {
                manifest.record_input(p)?;
            }
            let options = IngestOptions {
                k_shot: config.get_usize("ingest.k_shot", 5)?,
                category_column: String::new(),
            };
            let split = ingest_vending(
                &VendingPaths {
                    sales,
                    experiment,
                    product,
                    shelf,
                },
                &options,
            )?;
            let train_path = out.join("universe_train.json");
            let test_path = out.join("universe_test.json");
            write_universe(&split.train, &train_path)?;
            write_universe(&split.test, &test_path)?;
            manifest.record_output(&train_path);
            manifest.record_output(&test_path);
            manifest.write(&out)?;
            println!(
                "wrote {} ({} tasks) and {} ({} tasks)",
                train_path.display(),
                split.train.tasks.len(),
                test_path.display(),
                split.test.tasks.len()
            );
        }

        Command::Theory { axis, grid } => {
            let mut manifest = RunManifest::new("theory", seed, config.snapshot());
            let axis = match axis.as_str() {
                "h" => SweepAxis::ThresholdH,
                "T" | "t" => SweepAxis::TaskCountT,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "theory axis must be h or T, got {other:?}"
                    )))
                }
            };
            let grid = parse_grid_f64(grid)?;
            let theory_config = config.theory_config(seed)?;
            let n_seeds = config.get_usize("theory.n_seeds", 20)?;
            let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| seed.wrapping_add(i)).collect();
            let curve = sweep(axis, &grid, &theory_config, &seeds)?;

            let curve_path = out.join("risk_curve.txt");
            std::fs::write(&curve_path, curve.to_text())?;
            let points: Vec<CurvePoint> = (0..curve.axis.len())
                .map(|i| CurvePoint {
                    x: curve.axis[i],
                    y: curve.mean[i],
                    lo: curve.lo[i],
                    hi: curve.hi[i],
                })
                .collect();
            let svg_path = out.join("risk_curve.svg");
            let (label, method) = match axis {
                SweepAxis::ThresholdH => ("neighbor threshold h", "theory-h"),
                SweepAxis::TaskCountT => ("training task count T", "theory-T"),
            };
            write_curve_svg(&svg_path, "mean excess risk", label, "excess risk", &points)?;
            manifest.record_output(&curve_path);
            manifest.record_output(&svg_path);

            // One record per grid point; mse carries the mean excess risk and
            // mae the interval width.
            let mut records: Vec<MetricsRecord> = (0..curve.axis.len())
                .map(|i| MetricsRecord {
                    method: format!("{method}[{}]", curve.axis[i]),
                    seed,
                    mse: curve.mean[i],
                    mae: curve.hi[i] - curve.lo[i],
                    mape: None,
                    task_count: seeds.len(),
                    timestamp: 0,
                })
                .collect();
            stamp(&mut records, seed);
            let results = append_results(&out, &records)?;
            manifest.record_output(&results);
            manifest.write(&out)?;
            println!("wrote {} ({} rows)", curve_path.display(), curve.axis.len());
        }

        Command::AblateK {
            universe,
            embeddings,
            grid,
        } => {
            let mut manifest = RunManifest::new("ablate-k", seed, config.snapshot());
            manifest.record_input(universe)?;
            if let Some(e) = embeddings {
                manifest.record_input(e)?;
            }
            let loaded = load_universe(universe)?;
            let table = load_embeddings(embeddings)?;
            let k_grid = parse_grid_usize(grid)?;
            let train_config = config.train_config(seed)?;
            let n_seeds = config.get_usize("ablate.n_seeds", 5)?;
            let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| seed.wrapping_add(i)).collect();
            let points = ablate_kshot(&loaded, &table, &train_config, &k_grid, &seeds)?;

            let curve_points: Vec<CurvePoint> = points
                .iter()
                .map(|p| CurvePoint {
                    x: p.k as f64,
                    y: p.mean_mae,
                    lo: p.lo,
                    hi: p.hi,
                })
                .collect();
            let table_path = out.join("kshot_curve.txt");
            write_curve_table(&table_path, "k mean_mae lo hi", &curve_points)?;
            let svg_path = out.join("kshot_curve.svg");
            write_curve_svg(&svg_path, "k-shot ablation", "k", "mean MAE", &curve_points)?;
            manifest.record_output(&table_path);
            manifest.record_output(&svg_path);

            let mut records: Vec<MetricsRecord> = points
                .iter()
                .map(|p| MetricsRecord {
                    method: format!("ablate-k[{}]", p.k),
                    seed,
                    mse: p.mean_mse,
                    mae: p.mean_mae,
                    mape: None,
                    task_count: seeds.len(),
                    timestamp: 0,
                })
                .collect();
            stamp(&mut records, seed);
            let results = append_results(&out, &records)?;
            manifest.record_output(&results);
            manifest.write(&out)?;
            println!("wrote {} ({} rows)", table_path.display(), points.len());
        }
    }
    Ok(())
}

/// Convenience for tests: run with string arguments (program name added).
pub fn run_cli_str(args: &[&str]) -> i32 {
    let mut argv = vec!["ffomaml".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run_cli(&argv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::RiskCurve;

    fn testdata(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata").join(name)
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run_cli_str(&["frobnicate"]), 1);
        assert_eq!(run_cli_str(&[]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run_cli_str(&["--help"]), 0);
    }

    #[test]
    fn synth_then_embed_then_train_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let cfg_path = dir.path().join("run.cfg");
        std::fs::write(
            &cfg_path,
            "synth.n_products = 6\nsynth.envs_per_product = 2\n\
             gcn.epochs = 5\ntrain.episodes = 6\ntrain.val_interval = 0\ntrain.dropout_rate = 0.0\n",
        )
        .unwrap();
        let cfg = cfg_path.to_str().unwrap();

        assert_eq!(
            run_cli_str(&["--config", cfg, "--seed", "3", "--out", out, "synth"]),
            0
        );
        let universe = dir.path().join("universe.json");
        assert!(universe.exists());

        assert_eq!(
            run_cli_str(&[
                "--config", cfg, "--seed", "3", "--out", out,
                "embed", "--universe", universe.to_str().unwrap()
            ]),
            0
        );
        let embeddings = dir.path().join("embeddings.txt");
        assert!(embeddings.exists());

        assert_eq!(
            run_cli_str(&[
                "--config", cfg, "--seed", "3", "--out", out,
                "train", "--method", "ffomaml",
                "--universe", universe.to_str().unwrap(),
                "--embeddings", embeddings.to_str().unwrap()
            ]),
            0
        );
        assert!(dir.path().join("checkpoint.bin").exists());
        assert!(dir.path().join("results.jsonl").exists());
        assert!(dir.path().join("manifest.json").exists());

        assert_eq!(
            run_cli_str(&[
                "--config", cfg, "--seed", "3", "--out", out,
                "eval",
                "--universe", universe.to_str().unwrap(),
                "--checkpoint", dir.path().join("checkpoint.bin").to_str().unwrap(),
                "--embeddings", embeddings.to_str().unwrap()
            ]),
            0
        );

        let records = crate::harness::manifest::read_results(dir.path()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].method, "ffomaml");
        assert_eq!(records[1].method, "eval-ffomaml");
        // Training evaluated the same pool the eval run scored.
        assert_eq!(records[0].mse, records[1].mse);
    }

    #[test]
    fn train_is_deterministic_over_reruns() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let cfg_path = dir.path().join("run.cfg");
        std::fs::write(
            &cfg_path,
            "synth.n_products = 5\nsynth.envs_per_product = 2\n\
             train.episodes = 5\ntrain.val_interval = 0\n",
        )
        .unwrap();
        let cfg = cfg_path.to_str().unwrap();
        assert_eq!(run_cli_str(&["--config", cfg, "--seed", "7", "--out", out, "synth"]), 0);
        let universe = dir.path().join("universe.json");

        for _ in 0..2 {
            assert_eq!(
                run_cli_str(&[
                    "--config", cfg, "--seed", "7", "--out", out,
                    "train", "--method", "fomaml",
                    "--universe", universe.to_str().unwrap()
                ]),
                0
            );
        }
        let records = crate::harness::manifest::read_results(dir.path()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].mse.to_bits(), records[1].mse.to_bits());
        assert_eq!(records[0].mae.to_bits(), records[1].mae.to_bits());
        assert_eq!(records[0].mape, records[1].mape);
    }

    #[test]
    fn theory_grid_writes_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let cfg_path = dir.path().join("run.cfg");
        std::fs::write(
            &cfg_path,
            "theory.task_count = 20\ntheory.mc_samples = 500\ntheory.n_seeds = 10\n\
             theory.h_tune_grid = 0.1, 0.3\n",
        )
        .unwrap();
        let cfg = cfg_path.to_str().unwrap();
        assert_eq!(
            run_cli_str(&[
                "--config", cfg, "--seed", "1", "--out", out,
                "theory", "--axis", "T", "--grid", "5,10,20"
            ]),
            0
        );
        let curve_text = std::fs::read_to_string(dir.path().join("risk_curve.txt")).unwrap();
        let curve = RiskCurve::from_text(&curve_text).unwrap();
        assert_eq!(curve.axis, vec![5.0, 10.0, 20.0]);
        assert!(dir.path().join("risk_curve.svg").exists());
        let records = crate::harness::manifest::read_results(dir.path()).unwrap();
        assert_eq!(records.len(), 3);
    }

    #[test]
    fn ingest_jd_writes_universes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(
            run_cli_str(&[
                "--out", out,
                "ingest-jd",
                "--sku", testdata("jd/skus.csv").to_str().unwrap(),
                "--users", testdata("jd/users.csv").to_str().unwrap(),
                "--orders", testdata("jd/orders.csv").to_str().unwrap()
            ]),
            0
        );
        assert!(dir.path().join("universe_train.json").exists());
        assert!(dir.path().join("universe_test.json").exists());
    }

    #[test]
    fn data_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let bad = dir.path().join("missing.csv");
        assert_eq!(
            run_cli_str(&[
                "--out", out,
                "ingest-jd",
                "--sku", bad.to_str().unwrap(),
                "--users", bad.to_str().unwrap(),
                "--orders", bad.to_str().unwrap()
            ]),
            2
        );
    }

    #[test]
    fn bad_method_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run_cli_str(&["--out", out, "synth"]), 0);
        let universe = dir.path().join("universe.json");
        assert_eq!(
            run_cli_str(&[
                "--out", out,
                "train", "--method", "gbm",
                "--universe", universe.to_str().unwrap()
            ]),
            1
        );
    }
}
