//! Model assembly, training loop, checkpoints, prediction and gradient
//! verification.

mod checkpoint;
mod config;
mod gradcheck;
mod model;
mod optim;
mod train;

use thiserror::Error;

pub use checkpoint::{config_fingerprint, load_model, read_model, save_model, write_model};
pub use config::TrainConfig;
pub use gradcheck::{gradcheck, gradcheck_all, Component};
pub use model::{predict, DenseParams, Gradients, SegModel};
pub use optim::{clip_global_norm, Adam};
pub use train::{score, train, train_with_lookup, EpochLog, TrainOutcome};

use crate::corpus::CorpusError;
use crate::crf::CrfError;
use crate::embeddings::EmbeddingError;
use crate::encoder::EncoderError;
use crate::evalmetrics::EvalError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("no contextual streams for document {0:?}")]
    MissingStreams(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
