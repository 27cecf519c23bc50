//! Planar trajectories and their reconstruction from per-window velocities.

use super::{EvalError, Result};
use crate::dataio::{DeviceWindow, PoseSample};

/// A planar path sampled at strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    timestamps: Vec<f64>,
    positions: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn new(timestamps: Vec<f64>, positions: Vec<[f64; 2]>) -> Result<Self> {
        if timestamps.is_empty() {
            return Err(EvalError::Empty { what: "trajectory" });
        }
        if timestamps.len() != positions.len() {
            return Err(EvalError::Invalid {
                detail: format!(
                    "{} timestamps against {} positions",
                    timestamps.len(),
                    positions.len()
                ),
            });
        }
        for pair in timestamps.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(EvalError::Unordered {
                    detail: format!("{} follows {}", pair[1], pair[0]),
                });
            }
        }
        for (t, p) in timestamps.iter().zip(&positions) {
            if !t.is_finite() || !p[0].is_finite() || !p[1].is_finite() {
                return Err(EvalError::Invalid {
                    detail: format!("non-finite point ({t}, {:?})", p),
                });
            }
        }
        Ok(Trajectory { timestamps, positions })
    }

    /// Planar projection of ground-truth poses (x, y of each position).
    pub fn from_truth(truth: &[PoseSample]) -> Result<Self> {
        let timestamps = truth.iter().map(|p| p.t).collect();
        let positions = truth.iter().map(|p| [p.position[0], p.position[1]]).collect();
        Trajectory::new(timestamps, positions)
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start_time(&self) -> f64 {
        self.timestamps[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.timestamps.last().unwrap()
    }

    pub fn endpoint(&self) -> [f64; 2] {
        *self.positions.last().unwrap()
    }

    /// Linearly interpolated position at `t`, which must lie inside the span.
    pub fn position_at(&self, t: f64) -> Result<[f64; 2]> {
        if t < self.start_time() || t > self.end_time() {
            return Err(EvalError::Invalid {
                detail: format!(
                    "time {t} outside trajectory span [{}, {}]",
                    self.start_time(),
                    self.end_time()
                ),
            });
        }
        let i = match self.timestamps.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => return Ok(self.positions[i]),
            Err(i) => i,
        };
        let (t0, t1) = (self.timestamps[i - 1], self.timestamps[i]);
        let (p0, p1) = (self.positions[i - 1], self.positions[i]);
        let w = (t - t0) / (t1 - t0);
        Ok([p0[0] + w * (p1[0] - p0[0]), p0[1] + w * (p1[1] - p0[1])])
    }

    pub fn translated(&self, d: [f64; 2]) -> Trajectory {
        Trajectory {
            timestamps: self.timestamps.clone(),
            positions: self.positions.iter().map(|p| [p[0] + d[0], p[1] + d[1]]).collect(),
        }
    }

    /// Sum of segment lengths.
    pub fn path_length(&self) -> f64 {
        self.positions
            .windows(2)
            .map(|s| {
                let dx = s[1][0] - s[0][0];
                let dy = s[1][1] - s[0][1];
                (dx * dx + dy * dy).sqrt()
            })
            .sum()
    }
}

/// Integrates per-window planar velocities into a path from `y0`.
///
/// Window `i`'s velocity acts from `t_starts[i]` to `t_starts[i + 1]`; the
/// last window's velocity acts until `last_end`. The result has one point
/// per window start plus the final point at `last_end`.
pub fn integrate_trajectory(
    t_starts: &[f64],
    last_end: f64,
    velocities: &[[f64; 2]],
    y0: [f64; 2],
) -> Result<Trajectory> {
    if t_starts.is_empty() {
        return Err(EvalError::Empty { what: "window list" });
    }
    if t_starts.len() != velocities.len() {
        return Err(EvalError::Invalid {
            detail: format!(
                "{} window starts against {} velocities",
                t_starts.len(),
                velocities.len()
            ),
        });
    }
    for pair in t_starts.windows(2) {
        if !(pair[1] > pair[0]) {
            return Err(EvalError::Unordered {
                detail: format!("window start {} follows {}", pair[1], pair[0]),
            });
        }
    }
    if !(last_end > *t_starts.last().unwrap()) {
        return Err(EvalError::Invalid {
            detail: format!(
                "final window end {last_end} does not follow the last start {}",
                t_starts.last().unwrap()
            ),
        });
    }

    let n = t_starts.len();
    let mut timestamps = Vec::with_capacity(n + 1);
    let mut positions = Vec::with_capacity(n + 1);
    timestamps.extend_from_slice(t_starts);
    timestamps.push(last_end);
    let mut y = y0;
    positions.push(y);
    for i in 0..n {
        let dt = timestamps[i + 1] - timestamps[i];
        y = [y[0] + velocities[i][0] * dt, y[1] + velocities[i][1] * dt];
        positions.push(y);
    }
    Trajectory::new(timestamps, positions)
}

/// Path implied by the windows' own velocity labels; the discretization
/// reference for integrated predictions.
pub fn label_trajectory(windows: &[DeviceWindow], y0: [f64; 2]) -> Result<Trajectory> {
    let t_starts: Vec<f64> = windows.iter().map(|w| w.t_start).collect();
    let velocities: Vec<[f64; 2]> = windows.iter().map(|w| w.v_label).collect();
    let last_end = windows.last().map(|w| w.t_end()).unwrap_or(0.0);
    integrate_trajectory(&t_starts, last_end, &velocities, y0)
}
