//! Deterministic training: configuration, sequence-level splitting, the
//! minibatch loop, and checkpoint/report artifacts.

mod config;
mod split;
mod train;

pub use config::TrainConfig;
pub use split::{split_dataset, SequenceData, SplitIndices};
pub use train::{
    derive_seed, epoch_order, evaluate_loss, load_trained, train, EpochRecord, TrainReport,
};

use crate::diffnet::DiffError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config error: {detail}")]
    Config { detail: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("training diverged at step {step}: non-finite {component}")]
    Diverged { component: String, step: usize },
    #[error("need at least 3 sequences to split, got {got}")]
    TooFewSequences { got: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T> = std::result::Result<T, TrainError>;
