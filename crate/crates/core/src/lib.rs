//! Few-shot demand forecasting library: first-order meta-learning with
//! feature-wise linear modulation, graph-encoder task embeddings for proxy
//! selection, per-task baselines, a bias-variance risk simulator, and the
//! experiment harness (CLI, ingestion, metrics, persistence).

// Index-based loops are the house style in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod meta;
pub mod model;
pub mod seeding;
pub mod task;
pub mod theory;

pub use error::{Error, Result};
