//! CSV reading/writing for sensor streams and ground truth.
//!
//! Formats: sensor files carry the header `t,ax,ay,az,gx,gy,gz`, truth files
//! `t,px,py,pz,qw,qx,qy,qz`. All fields are decimal f64. Errors carry the
//! 1-based line number of the offending row.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::types::{ImuSample, PoseSample};
use super::{DataError, Result};

pub const STREAM_HEADER: &str = "t,ax,ay,az,gx,gy,gz";
pub const TRUTH_HEADER: &str = "t,px,py,pz,qw,qx,qy,qz";

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| DataError::Io { context: format!("reading {}", path.display()), source: e })
}

fn parse_fields(
    path: &Path,
    line_no: usize,
    line: &str,
    expect: usize,
) -> Result<Vec<f64>> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() != expect {
        return Err(DataError::Parse {
            path: path.display().to_string(),
            line: line_no,
            detail: format!("expected {expect} fields, found {}", parts.len()),
        });
    }
    let mut out = Vec::with_capacity(expect);
    for (i, p) in parts.iter().enumerate() {
        let v: f64 = p.trim().parse().map_err(|_| DataError::Parse {
            path: path.display().to_string(),
            line: line_no,
            detail: format!("field {} is not a number: {p:?}", i + 1),
        })?;
        if !v.is_finite() {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: line_no,
                detail: format!("field {} is not finite", i + 1),
            });
        }
        out.push(v);
    }
    Ok(out)
}

fn check_header(path: &Path, got: Option<&str>, want: &str) -> Result<()> {
    match got {
        Some(h) if h.trim() == want => Ok(()),
        Some(h) => Err(DataError::Parse {
            path: path.display().to_string(),
            line: 1,
            detail: format!("expected header {want:?}, found {h:?}"),
        }),
        None => Err(DataError::Empty { what: "csv file" }),
    }
}

fn check_monotonic(path: &Path, line_no: usize, prev: Option<f64>, t: f64) -> Result<()> {
    if let Some(p) = prev {
        if t <= p {
            return Err(DataError::NonMonotonic {
                path: path.display().to_string(),
                line: line_no,
            });
        }
    }
    Ok(())
}

/// Loads one sensor stream. Timestamps must be strictly increasing; duplicate
/// or out-of-order rows are rejected with the offending line.
pub fn load_stream(path: &Path) -> Result<Vec<ImuSample>> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    check_header(path, lines.next().map(|(_, l)| l), STREAM_HEADER)?;
    let mut out = Vec::new();
    let mut prev = None;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let f = parse_fields(path, line_no, line, 7)?;
        check_monotonic(path, line_no, prev, f[0])?;
        prev = Some(f[0]);
        out.push(ImuSample { t: f[0], accel: [f[1], f[2], f[3]], gyro: [f[4], f[5], f[6]] });
    }
    if out.is_empty() {
        return Err(DataError::Empty { what: "sensor stream" });
    }
    Ok(out)
}

/// Loads ground truth. Quaternions must be unit within 1e-6.
pub fn load_truth(path: &Path) -> Result<Vec<PoseSample>> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    check_header(path, lines.next().map(|(_, l)| l), TRUTH_HEADER)?;
    let mut out = Vec::new();
    let mut prev = None;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let f = parse_fields(path, line_no, line, 8)?;
        check_monotonic(path, line_no, prev, f[0])?;
        prev = Some(f[0]);
        let q = [f[4], f[5], f[6], f[7]];
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(DataError::BadQuaternion {
                path: path.display().to_string(),
                line: line_no,
                norm,
            });
        }
        out.push(PoseSample { t: f[0], position: [f[1], f[2], f[3]], orientation: q });
    }
    if out.is_empty() {
        return Err(DataError::Empty { what: "ground truth" });
    }
    Ok(out)
}

pub fn write_stream(path: &Path, samples: &[ImuSample]) -> Result<()> {
    let mut s = String::with_capacity(samples.len() * 64);
    s.push_str(STREAM_HEADER);
    s.push('\n');
    for x in samples {
        let a = x.accel;
        let g = x.gyro;
        let _ = writeln!(s, "{},{},{},{},{},{},{}", x.t, a[0], a[1], a[2], g[0], g[1], g[2]);
    }
    fs::write(path, s)
        .map_err(|e| DataError::Io { context: format!("writing {}", path.display()), source: e })
}

pub fn write_truth(path: &Path, samples: &[PoseSample]) -> Result<()> {
    let mut s = String::with_capacity(samples.len() * 72);
    s.push_str(TRUTH_HEADER);
    s.push('\n');
    for x in samples {
        let p = x.position;
        let q = x.orientation;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            x.t, p[0], p[1], p[2], q[0], q[1], q[2], q[3]
        );
    }
    fs::write(path, s)
        .map_err(|e| DataError::Io { context: format!("writing {}", path.display()), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_file(name: &str, content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("bodynet-csvio-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join(name);
        std::fs::write(&p, content).unwrap();
        p
    }

    #[test]
    fn three_rows_load_in_order() {
        let p = tmp_file(
            "ok.csv",
            "t,ax,ay,az,gx,gy,gz\n0.0,1,2,3,4,5,6\n0.01,1,2,3,4,5,6\n0.02,-1,0,0.5,0,0,0\n",
        );
        let s = load_stream(&p).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[2].accel, [-1.0, 0.0, 0.5]);
    }

    #[test]
    fn short_row_names_line() {
        let p = tmp_file("short.csv", "t,ax,ay,az,gx,gy,gz\n0.0,1,2,3,4,5,6\n0.01,1,2,3,4\n");
        let err = load_stream(&p).unwrap_err();
        match err {
            DataError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn shuffled_timestamps_rejected() {
        let p = tmp_file(
            "shuffled.csv",
            "t,ax,ay,az,gx,gy,gz\n0.02,1,2,3,4,5,6\n0.01,1,2,3,4,5,6\n",
        );
        assert!(matches!(load_stream(&p), Err(DataError::NonMonotonic { line: 3, .. })));
    }

    #[test]
    fn duplicate_timestamps_rejected() {
        let p = tmp_file(
            "dup.csv",
            "t,ax,ay,az,gx,gy,gz\n0.01,1,2,3,4,5,6\n0.01,1,2,3,4,5,6\n",
        );
        assert!(matches!(load_stream(&p), Err(DataError::NonMonotonic { .. })));
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let p = tmp_file("q.csv", "t,px,py,pz,qw,qx,qy,qz\n0.0,0,0,0,0.9,0,0,0\n");
        assert!(matches!(load_truth(&p), Err(DataError::BadQuaternion { .. })));
    }

    #[test]
    fn stream_roundtrip_is_exact() {
        let samples = vec![
            ImuSample { t: 0.0, accel: [0.1, -2.5, 3e-7], gyro: [1.0 / 3.0, 0.0, -9.81] },
            ImuSample { t: 0.04, accel: [f64::MIN_POSITIVE, 1e300, -0.0], gyro: [1.5, 2.5, 3.5] },
        ];
        let p = tmp_file("rt.csv", "");
        write_stream(&p, &samples).unwrap();
        let back = load_stream(&p).unwrap();
        assert_eq!(back, samples);
    }
}
