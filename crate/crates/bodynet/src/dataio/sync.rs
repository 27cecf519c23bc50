//! Jump-marker time synchronization.
//!
//! Recording protocol: the subject jumps three times right after start and
//! again before stop. Each jump puts a sharp spike in every device's vertical
//! acceleration and a bump in the ground-truth height track. Cross-correlating
//! those spike trains recovers each stream's clock offset against the truth
//! clock.

use super::types::{ImuSample, PoseSample};
use super::{DataError, Result};

/// Spike detection floor in m/s²; walking oscillations stay well below the
/// jump spikes, which land around 10 m/s².
const SPIKE_FLOOR: f64 = 1.0;
/// Minimum separation between distinct spikes, seconds.
const SPIKE_GAP: f64 = 0.15;
/// Correlation search range, seconds, and its grid rate, Hz.
const MAX_LAG: f64 = 2.0;
const GRID_HZ: f64 = 200.0;
/// Background level subtracted before correlation so walking motion does not
/// bias the spike alignment.
const CLIP_LEVEL: f64 = 3.0;

/// Indices of local maxima of |signal| that clear both the absolute floor and
/// half the global maximum, at least `SPIKE_GAP` apart.
pub fn detect_spikes(times: &[f64], signal: &[f64]) -> Vec<usize> {
    let n = signal.len();
    if n < 3 {
        return Vec::new();
    }
    let global_max = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let threshold = SPIKE_FLOOR.max(0.5 * global_max);
    let mut out: Vec<usize> = Vec::new();
    for i in 1..n - 1 {
        let v = signal[i].abs();
        if v < threshold || v < signal[i - 1].abs() || v < signal[i + 1].abs() {
            continue;
        }
        match out.last() {
            Some(&j) if times[i] - times[j] < SPIKE_GAP => {
                if v > signal[j].abs() {
                    *out.last_mut().unwrap() = i;
                }
            }
            _ => out.push(i),
        }
    }
    out
}

/// Vertical acceleration implied by the truth height track, via second
/// differences of the (possibly non-uniform) position samples.
fn truth_vertical_accel(truth: &[PoseSample]) -> (Vec<f64>, Vec<f64>) {
    let n = truth.len();
    let mut times = Vec::with_capacity(n.saturating_sub(2));
    let mut acc = Vec::with_capacity(n.saturating_sub(2));
    for i in 1..n.saturating_sub(1) {
        let (t0, t1, t2) = (truth[i - 1].t, truth[i].t, truth[i + 1].t);
        let (p0, p1, p2) =
            (truth[i - 1].position[2], truth[i].position[2], truth[i + 1].position[2]);
        let v01 = (p1 - p0) / (t1 - t0);
        let v12 = (p2 - p1) / (t2 - t1);
        times.push(t1);
        acc.push((v12 - v01) / (0.5 * (t2 - t0)));
    }
    (times, acc)
}

/// Linear interpolation of (times, values) onto a uniform grid; zero outside
/// the covered span.
fn on_grid(times: &[f64], values: &[f64], t0: f64, step: f64, count: usize) -> Vec<f64> {
    let mut out = vec![0.0; count];
    if times.is_empty() {
        return out;
    }
    let mut j = 0usize;
    for (i, slot) in out.iter_mut().enumerate() {
        let t = t0 + i as f64 * step;
        if t < times[0] || t > *times.last().unwrap() {
            continue;
        }
        while j + 1 < times.len() && times[j + 1] < t {
            j += 1;
        }
        if j + 1 >= times.len() {
            *slot = values[j];
            continue;
        }
        let w = (t - times[j]) / (times[j + 1] - times[j]);
        *slot = values[j] * (1.0 - w) + values[j + 1] * w;
    }
    out
}

/// Spike envelope used for correlation: |signal| with the walking-level
/// background clipped away.
fn spike_envelope(signal: &[f64]) -> Vec<f64> {
    signal.iter().map(|v| (v.abs() - CLIP_LEVEL).max(0.0)).collect()
}

/// Per-stream clock offsets against the truth clock. Adding the returned
/// offset to a stream's timestamps moves it onto the truth clock: a stream
/// recorded 0.4 s late gets offset −0.4.
pub fn align_by_jumps(streams: &[Vec<ImuSample>], truth: &[PoseSample]) -> Result<Vec<f64>> {
    if truth.len() < 3 {
        return Err(DataError::Empty { what: "ground truth" });
    }
    let (tt, ta) = truth_vertical_accel(truth);
    let truth_spikes = detect_spikes(&tt, &ta);
    if truth_spikes.len() < 3 {
        return Err(DataError::TooFewSpikes {
            which: "ground truth".to_string(),
            found: truth_spikes.len(),
        });
    }
    let step = 1.0 / GRID_HZ;
    let t0 = tt[0];
    let count = ((tt[tt.len() - 1] - t0) / step).floor() as usize + 1;
    let truth_env = {
        let g = on_grid(&tt, &ta, t0, step, count);
        spike_envelope(&g)
    };

    let mut offsets = Vec::with_capacity(streams.len());
    for (si, stream) in streams.iter().enumerate() {
        let times: Vec<f64> = stream.iter().map(|s| s.t).collect();
        let vert: Vec<f64> = stream.iter().map(|s| s.accel[2]).collect();
        let spikes = detect_spikes(&times, &vert);
        if spikes.len() < 3 {
            return Err(DataError::TooFewSpikes {
                which: format!("stream {si}"),
                found: spikes.len(),
            });
        }
        let stream_env = {
            let g = on_grid(&times, &vert, times[0], step, count);
            spike_envelope(&g)
        };
        // Correlate: score(lag) pairs stream grid index i with truth grid
        // index i+lag. Both grids share `step`, so lags are integer shifts.
        let max_shift = (MAX_LAG / step).round() as i64;
        let mut best = (f64::NEG_INFINITY, 0i64);
        for lag in -max_shift..=max_shift {
            let mut score = 0.0;
            let mut overlap = 0usize;
            for (i, &sv) in stream_env.iter().enumerate() {
                if sv == 0.0 {
                    continue;
                }
                let j = i as i64 + lag;
                if j < 0 || j >= truth_env.len() as i64 {
                    continue;
                }
                score += sv * truth_env[j as usize];
                overlap += 1;
            }
            if overlap > 0 && score > best.0 {
                best = (score, lag);
            }
        }
        if best.0 <= 0.0 {
            return Err(DataError::TooFewSpikes { which: format!("stream {si} (no correlated spikes)"), found: spikes.len() });
        }
        // Stream time times[0] + i*step pairs with truth time t0 + (i+lag)*step,
        // so the clock offset is their difference.
        offsets.push((t0 - times[0]) + best.1 as f64 * step);
    }
    Ok(offsets)
}

/// Shifts a stream's clock by `offset` seconds (onto the truth clock).
pub fn apply_offset(stream: &[ImuSample], offset: f64) -> Vec<ImuSample> {
    stream.iter().map(|s| ImuSample { t: s.t + offset, ..*s }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Raised-cosine height bump centered at `c` with width `w`, amplitude `a`.
    fn bump_height(t: f64, c: f64, w: f64, a: f64) -> f64 {
        let x = t - (c - w / 2.0);
        if x < 0.0 || x > w {
            0.0
        } else {
            a / 2.0 * (1.0 - (2.0 * std::f64::consts::PI * x / w).cos())
        }
    }

    /// Analytic second derivative of the bump.
    fn bump_accel(t: f64, c: f64, w: f64, a: f64) -> f64 {
        let x = t - (c - w / 2.0);
        if x < 0.0 || x > w {
            0.0
        } else {
            let om = 2.0 * std::f64::consts::PI / w;
            a / 2.0 * om * om * (om * x).cos()
        }
    }

    const JUMPS: [f64; 6] = [1.0, 1.6, 2.2, 27.0, 27.6, 28.2];
    const W: f64 = 0.5;
    const A: f64 = 0.15;

    fn make_truth() -> Vec<PoseSample> {
        (0..(30.0 / 0.02) as usize)
            .map(|i| {
                let t = i as f64 * 0.02;
                let pz: f64 = JUMPS.iter().map(|&c| bump_height(t, c, W, A)).sum();
                PoseSample { t, position: [0.0, 0.0, pz], orientation: [1.0, 0.0, 0.0, 0.0] }
            })
            .collect()
    }

    fn make_stream(clock_shift: f64) -> Vec<ImuSample> {
        // A device whose clock runs `clock_shift` ahead: the event at truth
        // time u appears at stream timestamp u + clock_shift.
        (0..(30.0 / 0.01) as usize)
            .map(|i| {
                let ts = i as f64 * 0.01 + clock_shift;
                let u = ts - clock_shift;
                let az: f64 = JUMPS.iter().map(|&c| bump_accel(u, c, W, A)).sum();
                ImuSample { t: ts, accel: [0.0, 0.0, az], gyro: [0.0; 3] }
            })
            .collect()
    }

    #[test]
    fn constructed_shift_recovered() {
        let truth = make_truth();
        let shifted = make_stream(0.40);
        let offsets = align_by_jumps(&[shifted], &truth).unwrap();
        assert!(
            (offsets[0] + 0.40).abs() <= 0.04 + 1e-9,
            "want -0.40 within one 25 Hz period, got {}",
            offsets[0]
        );
    }

    #[test]
    fn zero_shift_recovers_zero() {
        let truth = make_truth();
        let stream = make_stream(0.0);
        let offsets = align_by_jumps(&[stream], &truth).unwrap();
        assert!(offsets[0].abs() <= 0.04 + 1e-9, "got {}", offsets[0]);
    }

    #[test]
    fn identical_streams_get_identical_offsets() {
        let truth = make_truth();
        let s = make_stream(0.25);
        let offsets = align_by_jumps(&[s.clone(), s], &truth).unwrap();
        assert_eq!(offsets[0], offsets[1]);
    }

    #[test]
    fn too_few_spikes_is_reported_with_count() {
        let truth = make_truth();
        let flat: Vec<ImuSample> = (0..3000)
            .map(|i| ImuSample { t: i as f64 * 0.01, accel: [0.0; 3], gyro: [0.0; 3] })
            .collect();
        match align_by_jumps(&[flat], &truth) {
            Err(DataError::TooFewSpikes { found, .. }) => assert_eq!(found, 0),
            other => panic!("expected spike-count error, got {:?}", other.map(|v| v.len())),
        }
    }

    #[test]
    fn spike_detector_separates_close_peaks() {
        let times: Vec<f64> = (0..400).map(|i| i as f64 * 0.01).collect();
        let mut sig = vec![0.0; 400];
        // 1.00 s and 1.16 s are distinct; 1.18 s merges into 1.16 s and wins
        // by magnitude.
        sig[100] = 10.0;
        sig[116] = 9.0;
        sig[118] = 12.0;
        sig[300] = 11.0;
        let spikes = detect_spikes(&times, &sig);
        assert_eq!(spikes, vec![100, 118, 300]);
    }
}
