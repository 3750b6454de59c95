//! Experiment surface: metrics, configuration, CSV ingestion, run
//! persistence, plot emission, the k-shot ablation, and the CLI.

pub mod ablate;
pub mod cli;
pub mod config;
pub mod experiment;
pub mod ingest;
pub mod manifest;
pub mod metrics;
pub mod plot;
