//! Sensor-log ingestion: CSV parsing, jump-based time alignment, resampling,
//! frame projection, windowing, and velocity labels.

pub mod csvio;
pub mod manifest;
pub mod sync;
pub mod types;
pub mod window;

pub use csvio::{load_stream, load_truth, write_stream, write_truth};
pub use manifest::{load_manifest, save_manifest, DeviceEntry, SequenceManifest, WalkingMode};
pub use sync::{align_by_jumps, apply_offset, detect_spikes};
pub use types::{DeviceWindow, ImuSample, PoseSample};
pub use window::{
    interp_position, make_windows, project_to_global, resample, rotation_from_quaternion,
    segment_stream,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Parse { path: String, line: usize, detail: String },
    #[error("{path}:{line}: timestamps must be strictly increasing")]
    NonMonotonic { path: String, line: usize },
    #[error("{path}:{line}: quaternion norm {norm} is not within 1e-6 of 1")]
    BadQuaternion { path: String, line: usize, norm: f64 },
    #[error("{what} is empty")]
    Empty { what: &'static str },
    #[error("target rate {requested} Hz exceeds native rate {native:.3} Hz")]
    RateTooHigh { requested: f64, native: f64 },
    #[error("matrix is not a rotation: {detail}")]
    NotRotation { detail: String },
    #[error("{samples} samples cannot fit one window of {window}")]
    SpanTooShort { samples: usize, window: usize },
    #[error("ground truth does not cover the stream span: {detail}")]
    TruthCoverage { detail: String },
    #[error("streams disagree: {detail}")]
    MismatchedStreams { detail: String },
    #[error("{which}: found {found} jump spikes, need at least 3")]
    TooFewSpikes { which: String, found: usize },
    #[error("manifest {path}: {detail}")]
    Manifest { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, DataError>;
