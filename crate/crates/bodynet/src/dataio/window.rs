//! Resampling, frame projection, gap handling, and window extraction.

use super::types::{DeviceWindow, ImuSample, PoseSample};
use super::{DataError, Result};

/// Linear resampling onto a uniform grid starting at the stream's first
/// timestamp. Grid points that land exactly on a source timestamp take that
/// sample verbatim, which makes resampling at the same rate idempotent.
pub fn resample(stream: &[ImuSample], rate_hz: f64) -> Result<Vec<ImuSample>> {
    if stream.is_empty() {
        return Err(DataError::Empty { what: "stream to resample" });
    }
    if rate_hz <= 0.0 {
        return Err(DataError::RateTooHigh { requested: rate_hz, native: 0.0 });
    }
    if stream.len() == 1 {
        return Ok(stream.to_vec());
    }
    let t0 = stream[0].t;
    let t_end = stream[stream.len() - 1].t;
    let native = (stream.len() - 1) as f64 / (t_end - t0);
    if rate_hz > native * (1.0 + 1e-9) {
        return Err(DataError::RateTooHigh { requested: rate_hz, native });
    }
    let step = 1.0 / rate_hz;
    let mut out = Vec::new();
    let mut j = 0usize;
    let mut m = 0usize;
    loop {
        let t = t0 + m as f64 * step;
        if t > t_end + 1e-12 {
            break;
        }
        while j + 1 < stream.len() && stream[j + 1].t <= t {
            j += 1;
        }
        if (stream[j].t - t).abs() <= 1e-12 {
            out.push(ImuSample { t, ..stream[j] });
        } else {
            let a = &stream[j];
            let b = &stream[j + 1];
            let w = (t - a.t) / (b.t - a.t);
            let lerp3 = |x: [f64; 3], y: [f64; 3]| {
                [
                    x[0] * (1.0 - w) + y[0] * w,
                    x[1] * (1.0 - w) + y[1] * w,
                    x[2] * (1.0 - w) + y[2] * w,
                ]
            };
            out.push(ImuSample { t, accel: lerp3(a.accel, b.accel), gyro: lerp3(a.gyro, b.gyro) });
        }
        m += 1;
    }
    Ok(out)
}

fn rotation_check(r: &[[f64; 3]; 3]) -> Result<()> {
    // R R^T = I within 1e-9 and det = +1.
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if (dot - want).abs() > 1e-9 {
                return Err(DataError::NotRotation {
                    detail: format!("row {i}.row {j} = {dot}, want {want}"),
                });
            }
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    if (det - 1.0).abs() > 1e-9 {
        return Err(DataError::NotRotation { detail: format!("determinant {det}") });
    }
    Ok(())
}

fn rotate(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// Rotates every accel/gyro vector into the global frame using the device's
/// orientation at the initial timestamp.
pub fn project_to_global(stream: &[ImuSample], rotation: &[[f64; 3]; 3]) -> Result<Vec<ImuSample>> {
    rotation_check(rotation)?;
    Ok(stream
        .iter()
        .map(|s| ImuSample {
            t: s.t,
            accel: rotate(rotation, s.accel),
            gyro: rotate(rotation, s.gyro),
        })
        .collect())
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub fn rotation_from_quaternion(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Truth position linearly interpolated at time `t`.
pub fn interp_position(truth: &[PoseSample], t: f64) -> Result<[f64; 3]> {
    if truth.is_empty() {
        return Err(DataError::Empty { what: "ground truth" });
    }
    let first = truth[0].t;
    let last = truth[truth.len() - 1].t;
    if t < first - 1e-9 || t > last + 1e-9 {
        return Err(DataError::TruthCoverage {
            detail: format!("t={t} outside truth span [{first}, {last}]"),
        });
    }
    let i = truth.partition_point(|p| p.t <= t);
    if i == 0 {
        return Ok(truth[0].position);
    }
    if i >= truth.len() {
        return Ok(truth[truth.len() - 1].position);
    }
    let (a, b) = (&truth[i - 1], &truth[i]);
    let w = (t - a.t) / (b.t - a.t);
    Ok([
        a.position[0] * (1.0 - w) + b.position[0] * w,
        a.position[1] * (1.0 - w) + b.position[1] * w,
        a.position[2] * (1.0 - w) + b.position[2] * w,
    ])
}

/// Slices J aligned, equally sampled streams into windows of `window` samples
/// every `stride` samples, labeling each with mean horizontal velocity from
/// truth displacement across the window.
pub fn make_windows(
    streams: &[Vec<ImuSample>],
    truth: &[PoseSample],
    window: usize,
    stride: usize,
) -> Result<Vec<DeviceWindow>> {
    if streams.is_empty() {
        return Err(DataError::Empty { what: "stream set" });
    }
    if window < 2 || stride == 0 {
        return Err(DataError::MismatchedStreams {
            detail: format!("window {window} and stride {stride} must be positive (window >= 2)"),
        });
    }
    let n = streams[0].len();
    for (j, s) in streams.iter().enumerate() {
        if s.len() != n {
            return Err(DataError::MismatchedStreams {
                detail: format!("stream 0 has {n} samples, stream {j} has {}", s.len()),
            });
        }
        for i in 0..n {
            if (s[i].t - streams[0][i].t).abs() > 1e-6 {
                return Err(DataError::MismatchedStreams {
                    detail: format!(
                        "timestamps diverge at sample {i}: {} vs {}",
                        streams[0][i].t, s[i].t
                    ),
                });
            }
        }
    }
    if n < window {
        return Err(DataError::SpanTooShort { samples: n, window });
    }
    let count = (n - window) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * stride;
        let end = start + window - 1;
        let t_start = streams[0][start].t;
        let t_end = streams[0][end].t;
        let duration = t_end - t_start;
        let p0 = interp_position(truth, t_start)?;
        let p1 = interp_position(truth, t_end)?;
        let v_label = [(p1[0] - p0[0]) / duration, (p1[1] - p0[1]) / duration];
        let device_data: Vec<Vec<[f64; 6]>> = streams
            .iter()
            .map(|s| {
                s[start..=end]
                    .iter()
                    .map(|x| {
                        [x.accel[0], x.accel[1], x.accel[2], x.gyro[0], x.gyro[1], x.gyro[2]]
                    })
                    .collect()
            })
            .collect();
        out.push(DeviceWindow { device_data, t_start, duration, v_label });
    }
    Ok(out)
}

/// Splits a stream wherever consecutive samples are more than `max_gap`
/// seconds apart; inside each segment, holds the last sample across smaller
/// gaps so downstream resampling sees a dense record.
pub fn segment_stream(stream: &[ImuSample], nominal_rate_hz: f64, max_gap: f64) -> Vec<Vec<ImuSample>> {
    let dt = 1.0 / nominal_rate_hz;
    let mut segments = Vec::new();
    let mut current: Vec<ImuSample> = Vec::new();
    for &s in stream {
        if let Some(&last) = current.last() {
            let gap = s.t - last.t;
            if gap > max_gap {
                segments.push(std::mem::take(&mut current));
            } else if gap > 1.5 * dt {
                // Hold the last value on the nominal grid across the dropout.
                let mut k = 1;
                while last.t + (k as f64 + 0.5) * dt < s.t {
                    current.push(ImuSample { t: last.t + k as f64 * dt, ..last });
                    k += 1;
                }
            }
        }
        current.push(s);
    }
    if !current.is_empty() {
        segments.push(current);
    }
    segments
}
