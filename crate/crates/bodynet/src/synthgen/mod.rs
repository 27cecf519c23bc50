//! Deterministic synthetic walking sequences: scripted speed/heading
//! profiles rendered into multi-device IMU streams plus a ground-truth
//! trajectory, with jump markers for clock alignment and preset
//! parameterizations of the five walking modes.

mod generate;
mod script;

pub use generate::{generate, SyntheticSequence, GRID_HZ};
pub use script::{
    preset, DeviceSpec, MotionScript, OscillationSpec, PiecewiseLinear, JUMP_BUMP_HEIGHT,
    JUMP_BUMP_WIDTH, JUMP_OFFSETS,
};

use crate::dataio::DataError;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("bad motion script: {detail}")]
    BadScript { detail: String },
    #[error("no preset for walking mode {mode}")]
    UnknownPreset { mode: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, SynthError>;
