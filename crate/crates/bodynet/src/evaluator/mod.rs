//! Trajectory reconstruction from window velocities, accuracy metrics
//! (absolute and relative trajectory error, error CDF), a step-counting
//! dead-reckoning baseline, and report emission.

pub mod metrics;
pub mod pdr;
pub mod report;
pub mod trajectory;

pub use metrics::{ate, empirical_cdf, error_cdf, pointwise_errors, rte, RteResult};
pub use pdr::pdr_baseline;
pub use report::{MetricsReport, SequenceMetrics};
pub use trajectory::{integrate_trajectory, label_trajectory, Trajectory};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{what} is empty")]
    Empty { what: &'static str },
    #[error("timestamps must be strictly increasing: {detail}")]
    Unordered { detail: String },
    #[error("{detail}")]
    Invalid { detail: String },
    #[error("trajectories do not overlap in time")]
    NoOverlap,
    #[error("{got} samples cannot cover the {need}-sample filter warm-up")]
    FilterWarmup { got: usize, need: usize },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;
