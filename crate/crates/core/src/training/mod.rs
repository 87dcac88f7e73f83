//! Optimization, metrics, run histories and the train / fine-tune loops.

mod config;
mod history;
mod metrics;
mod optim;
mod run;

use std::path::PathBuf;

use thiserror::Error;

use crate::datasets::DatasetError;
use crate::model::ModelError;
use crate::tensor::TensorError;

pub use config::TrainConfig;
pub use history::{
    compare_runs, format_percent, format_sig9, ComparisonRow, ComparisonTable, EpochRecord, RunHistory,
    HISTORY_HEADER,
};
pub use metrics::{compute_metrics, MetricsReport};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use run::{evaluate, finetune, train_loop, EpochObserver, Evaluation, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    EmptyInput(&'static str),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("model has {model} classes but the dataset has {dataset}")]
    ClassCountMismatch { model: usize, dataset: usize },
    #[error("training diverged at epoch {epoch}, step {step}: {source}")]
    NonFinite {
        epoch: usize,
        step: u64,
        source: TensorError,
    },
    #[error("invalid run history: {0}")]
    InvalidHistory(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
