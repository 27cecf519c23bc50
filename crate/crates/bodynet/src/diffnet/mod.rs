//! Differentiable-compute core: tensors, a reverse-mode tape, the neural
//! building blocks the velocity model needs, Adam, gradient checking, and a
//! binary checkpoint container.
//!
//! All math is double precision. One tape holds one forward graph; values are
//! computed eagerly as ops are recorded, and `backward` walks the tape in
//! reverse. Graphs are single-threaded; independent replicas may run on
//! independent threads.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, SCHEMA_VERSION};
pub use gradcheck::{
    finite_diff_check, layer_suite, ComponentCheck, GradCheckResult, LAYER_THRESHOLD,
};
pub use layers::{
    BatchNorm1d, Conv1d, Conv1dBlock, Dropout, Graph, Gru, Linear, MaxPool1d, MultiHeadAttention,
};
pub use params::ParameterSet;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors raised by tensor construction, tape ops, and the optimizer.
#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op} expects a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("{what} must be positive, got {got}")]
    NotPositive { what: &'static str, got: f64 },
    #[error("time axis is empty in {op}")]
    EmptyTime { op: &'static str },
    #[error("parameter {name} has no gradient")]
    MissingGrad { name: String },
    #[error("duplicate parameter name {name}")]
    DuplicateParam { name: String },
    #[error("unknown parameter {name}")]
    UnknownParam { name: String },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {detail}")]
    CorruptCheckpoint { detail: String },
    #[error("checkpoint schema version {found}, this build reads {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("{0}")]
    Eval(String),
}

pub type Result<T> = std::result::Result<T, DiffError>;
