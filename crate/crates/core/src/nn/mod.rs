//! Small CPU network stack with hand-written backward passes.

mod array;
mod batchnorm;
pub mod checkpoint;
mod conv;
mod gemm;
pub mod gradcheck;
mod linear;
mod network;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use array::Array4;
pub use batchnorm::{BatchNorm2d, BnCache, BnGrads, DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry};
pub use conv::{conv_output_len, Conv2d, ConvGrads};
pub use linear::{relu, relu_backward, relu_in_place, Linear, LinearGrads};
pub use network::{
    init_params, ActorCritic, CnnCache, CnnExtractor, CnnShapes, CnnSpec, ConvSpec, Extractor, ExtractorCache,
    ExtractorSpec, ForwardCache, GradientSet, MlpCache, MlpExtractor, MlpSpec, NetworkSpec, OutputGrads, PolicyOutput,
    TensorKind, TensorMut, TensorRef, POLICY_HEAD_GAIN,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value at index {index} after layer `{layer}`")]
    NonFinite { layer: String, index: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Batch-norm behaviour: batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Inference,
}
