//! Per-sequence manifest: one TOML document naming the device logs, the
//! ground-truth file, the walking mode, and sample rates.
//!
//! ```toml
//! sequence_id = "seq-001"
//! subject_id = "s01"
//! mode = "STW"
//! truth_path = "truth.csv"
//! truth_rate_hz = 30.0
//!
//! [[devices]]
//! name = "phone"
//! path = "phone.csv"
//! rate_hz = 100.0
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DataError, Result};

/// Recording condition tags. The first five describe wearable-set variations,
/// the next four phone placements; SYN marks generated sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WalkingMode {
    /// Stable walking, all devices worn normally.
    STW,
    /// Phone pose varies during the walk.
    PVW,
    /// Motion variation walking (speed changes, turns).
    MVW,
    /// One device is removed mid-sequence.
    DRW,
    /// Walking with deliberate stops.
    DLW,
    /// Phone held in hand.
    HD,
    /// Phone held while swinging.
    MP,
    /// Phone in pocket.
    PK,
    /// Phone in bag.
    BG,
    /// Synthetic sequence.
    SYN,
}

impl WalkingMode {
    pub const ALL: [WalkingMode; 10] = [
        WalkingMode::STW,
        WalkingMode::PVW,
        WalkingMode::MVW,
        WalkingMode::DRW,
        WalkingMode::DLW,
        WalkingMode::HD,
        WalkingMode::MP,
        WalkingMode::PK,
        WalkingMode::BG,
        WalkingMode::SYN,
    ];
}

impl fmt::Display for WalkingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for WalkingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        WalkingMode::ALL
            .iter()
            .find(|m| format!("{m:?}") == s)
            .copied()
            .ok_or_else(|| format!("unknown walking mode {s:?}"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub name: String,
    pub path: String,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub sequence_id: String,
    pub subject_id: String,
    pub mode: WalkingMode,
    pub truth_path: String,
    pub truth_rate_hz: f64,
    pub devices: Vec<DeviceEntry>,
}

impl SequenceManifest {
    /// Checks that every referenced file exists relative to `dir`.
    pub fn verify_files(&self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        if !dir.join(&self.truth_path).is_file() {
            missing.push(self.truth_path.clone());
        }
        for d in &self.devices {
            if !dir.join(&d.path).is_file() {
                missing.push(d.path.clone());
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(DataError::Manifest {
                path: dir.display().to_string(),
                detail: format!("missing files: {}", missing.join(", ")),
            })
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<SequenceManifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| DataError::Io { context: format!("reading {}", path.display()), source: e })?;
    let m: SequenceManifest = toml::from_str(&text)
        .map_err(|e| DataError::Manifest { path: path.display().to_string(), detail: e.to_string() })?;
    if m.devices.is_empty() {
        return Err(DataError::Manifest {
            path: path.display().to_string(),
            detail: "no devices listed".to_string(),
        });
    }
    Ok(m)
}

pub fn save_manifest(path: &Path, m: &SequenceManifest) -> Result<()> {
    let text = toml::to_string_pretty(m).map_err(|e| DataError::Manifest {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    fs::write(path, text)
        .map_err(|e| DataError::Io { context: format!("writing {}", path.display()), source: e })
}
