//! Point cloud classifiers: the attention network and the dense baseline.

mod checkpoint;
mod classifier;
mod config;
mod layers;
mod mlp;
mod params;

use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::tensor::TensorError;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError,
    HeadPolicy, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use classifier::{argmax_rows, check_layout, forward, forward_classifier, Model};
pub use config::{downsampled, AttentionKind, ModelConfig, ModelKind};
pub use layers::{
    plan_transition_down, point_transformer_layer, transition_down, two_layer, AttentionOutput, DownPlan,
    LayerVars, Linear, StartPolicy,
};
pub use mlp::{cloud_embedding, mlp_baseline_forward, EMBEDDING_DIM, HISTOGRAM_BINS};
pub use params::{attention_layout, init_params, init_tensor, is_head, param_layout, ParamStore, ParamVars, HEAD_PREFIX};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("missing parameter tensors: {}", .0.join(", "))]
    MissingTensors(Vec<String>),
    #[error("unexpected parameter tensors: {}", .0.join(", "))]
    UnexpectedTensors(Vec<String>),
    #[error("tensor `{name}` has shape {found:?} but the model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
