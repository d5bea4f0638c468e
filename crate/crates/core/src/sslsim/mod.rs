//! A small semi-supervised learning harness: synthetic hierarchical data, a
//! linear sigmoid classifier trained by SGD, and a self-training loop whose
//! pseudo labels go through the revision pipeline.

pub mod data;
pub mod metrics;
pub mod model;
pub mod train;

use thiserror::Error;

use crate::fuzzy::FuzzyError;
use crate::pipeline::PipelineError;

pub use data::{gen_synthetic, SynthConfig, SynthDataset};
pub use metrics::{evaluate, Metrics, PseudoQuality};
pub use model::{Head, ToyModel};
pub use train::{run, train, HierarchySource, SimConfig, TrainReport, Trained};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("{labeled} labeled points cannot cover {classes} classes")]
    Infeasible { labeled: usize, classes: usize },
    #[error("training diverged at iteration {iteration} (L^l = {supervised}, L^u = {unsupervised})")]
    Divergence {
        iteration: usize,
        supervised: f64,
        unsupervised: f64,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}
