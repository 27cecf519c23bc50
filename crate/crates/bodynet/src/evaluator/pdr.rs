//! Step-and-heading dead reckoning from a single gravity-compensated,
//! uniformly resampled IMU stream.
//!
//! Steps are peaks of the low-pass-filtered acceleration magnitude that
//! rise a fixed margin above its moving mean; heading is the integrated
//! gyro yaw; every step advances a fixed stride along the heading.

use super::trajectory::Trajectory;
use super::{EvalError, Result};
use crate::dataio::ImuSample;

/// Paper-quoted stride for the phone baseline.
pub const STEP_LENGTH_M: f64 = 0.67;

const CUTOFF_HZ: f64 = 3.0;
const MIN_STEP_GAP_S: f64 = 0.3;
const PEAK_MARGIN: f64 = 0.15;
const MOVING_MEAN_S: f64 = 2.0;

/// Windowed-sinc low-pass kernel (Hamming window), unit DC gain.
fn lowpass_kernel(fs: f64, taps: usize) -> Vec<f64> {
    let c = (taps - 1) as f64 / 2.0;
    let fc = CUTOFF_HZ / fs;
    let mut h: Vec<f64> = (0..taps)
        .map(|j| {
            let x = j as f64 - c;
            let sinc = if x == 0.0 {
                1.0
            } else {
                (2.0 * std::f64::consts::PI * fc * x).sin() / (std::f64::consts::PI * x)
            };
            let window = 0.54
                - 0.46 * (2.0 * std::f64::consts::PI * j as f64 / (taps - 1) as f64).cos();
            sinc * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    for v in &mut h {
        *v /= sum;
    }
    h
}

/// Centered moving mean with edge clamping.
fn moving_mean(x: &[f64], half: usize) -> Vec<f64> {
    let mut prefix = vec![0.0];
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

pub fn pdr_baseline(stream: &[ImuSample], step_length: f64) -> Result<Trajectory> {
    if stream.len() < 2 {
        return Err(EvalError::Empty { what: "IMU stream" });
    }
    if !(step_length > 0.0) {
        return Err(EvalError::Invalid {
            detail: format!("step length {step_length} m is not positive"),
        });
    }
    let n = stream.len();
    let span = stream[n - 1].t - stream[0].t;
    if !(span > 0.0) {
        return Err(EvalError::Unordered { detail: "stream span is not positive".into() });
    }
    let dt = span / (n - 1) as f64;
    let fs = 1.0 / dt;

    // One second of taps keeps the 3 Hz transition usable at walking rates.
    let taps = ((fs.round() as usize) | 1).max(5);
    if n < taps {
        return Err(EvalError::FilterWarmup { got: n, need: taps });
    }

    let magnitude: Vec<f64> = stream
        .iter()
        .map(|s| (s.accel[0].powi(2) + s.accel[1].powi(2) + s.accel[2].powi(2)).sqrt())
        .collect();

    let kernel = lowpass_kernel(fs, taps);
    let center = (taps - 1) / 2;
    // Valid region only; output k aligns with input sample k + center.
    let filtered: Vec<f64> = (0..=n - taps)
        .map(|k| kernel.iter().enumerate().map(|(j, &h)| h * magnitude[k + j]).sum())
        .collect();

    let half_mean = ((MOVING_MEAN_S / 2.0 * fs).round() as usize).max(1);
    let baseline = moving_mean(&filtered, half_mean);

    // Heading from integrated gyro yaw, zero at stream start.
    let mut yaw = vec![0.0; n];
    for i in 1..n {
        yaw[i] = yaw[i - 1] + stream[i - 1].gyro[2] * (stream[i].t - stream[i - 1].t);
    }

    let mut timestamps = vec![stream[0].t];
    let mut positions = vec![[0.0, 0.0]];
    let mut last_step_t = f64::NEG_INFINITY;
    for i in 1..filtered.len().saturating_sub(1) {
        let is_peak = filtered[i] > filtered[i - 1] && filtered[i] >= filtered[i + 1];
        if !is_peak || filtered[i] <= baseline[i] + PEAK_MARGIN {
            continue;
        }
        let sample = i + center;
        let t = stream[sample].t;
        if t - last_step_t < MIN_STEP_GAP_S {
            continue;
        }
        last_step_t = t;
        let heading = yaw[sample];
        let prev = *positions.last().unwrap();
        positions.push([
            prev[0] + step_length * heading.cos(),
            prev[1] + step_length * heading.sin(),
        ]);
        timestamps.push(t);
    }
    Trajectory::new(timestamps, positions)
}
