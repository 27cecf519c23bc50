//! Trajectory accuracy metrics on a shared timeline.
//!
//! Both trajectories are compared at the reference timestamps that fall
//! inside their temporal overlap, with the prediction interpolated onto
//! them. No alignment transform is applied: predictions share the truth's
//! starting position by construction, and fitting one would hide heading
//! drift.

use super::trajectory::Trajectory;
use super::{EvalError, Result};

/// Reference timestamps inside the overlap of both spans.
fn common_grid(predicted: &Trajectory, truth: &Trajectory) -> Result<Vec<f64>> {
    let t0 = predicted.start_time().max(truth.start_time());
    let t1 = predicted.end_time().min(truth.end_time());
    if !(t1 > t0) {
        return Err(EvalError::NoOverlap);
    }
    let grid: Vec<f64> =
        truth.timestamps().iter().copied().filter(|&t| t >= t0 && t <= t1).collect();
    if grid.is_empty() {
        return Err(EvalError::Invalid {
            detail: format!("no reference samples inside the overlap [{t0}, {t1}]"),
        });
    }
    Ok(grid)
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Pointwise position errors on the common timeline.
pub fn pointwise_errors(predicted: &Trajectory, truth: &Trajectory) -> Result<Vec<f64>> {
    let grid = common_grid(predicted, truth)?;
    grid.iter()
        .map(|&t| Ok(euclid(predicted.position_at(t)?, truth.position_at(t)?)))
        .collect()
}

/// Absolute trajectory error: root-mean-square of pointwise position errors.
pub fn ate(predicted: &Trajectory, truth: &Trajectory) -> Result<f64> {
    let errors = pointwise_errors(predicted, truth)?;
    let n = errors.len() as f64;
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RteResult {
    pub meters: f64,
    /// Set when the overlap was shorter than the requested interval and a
    /// single truncated interval was evaluated instead.
    pub truncated: bool,
}

/// Relative trajectory error over fixed-length intervals.
///
/// The overlap is cut into consecutive `interval`-second pieces. Within
/// each piece the prediction is re-anchored to the truth at the piece's
/// start, the displacement error is taken at every reference timestamp in
/// the piece, and the piece contributes its RMSE; the result averages the
/// pieces. An overlap shorter than `interval` degrades to one truncated
/// piece and sets the warning flag.
pub fn rte(predicted: &Trajectory, truth: &Trajectory, interval: f64) -> Result<RteResult> {
    if !(interval > 0.0) || !interval.is_finite() {
        return Err(EvalError::Invalid {
            detail: format!("interval {interval} s is not positive"),
        });
    }
    let grid = common_grid(predicted, truth)?;
    let t0 = *grid.first().unwrap();
    let t1 = *grid.last().unwrap();

    let truncated = t1 - t0 < interval;
    let starts: Vec<f64> = if truncated {
        vec![t0]
    } else {
        let mut s = Vec::new();
        let mut k = 0usize;
        loop {
            let start = t0 + k as f64 * interval;
            if start + interval > t1 {
                break;
            }
            s.push(start);
            k += 1;
        }
        s
    };

    let mut piece_rmse = Vec::with_capacity(starts.len());
    for &s in &starts {
        let e = if truncated { t1 } else { s + interval };
        let p_anchor = predicted.position_at(s)?;
        let q_anchor = truth.position_at(s)?;
        let mut sq = 0.0;
        let mut count = 0usize;
        for &t in grid.iter().filter(|&&t| t >= s && t <= e) {
            let p = predicted.position_at(t)?;
            let q = truth.position_at(t)?;
            let rel = [(p[0] - p_anchor[0]) - (q[0] - q_anchor[0]),
                       (p[1] - p_anchor[1]) - (q[1] - q_anchor[1])];
            sq += rel[0] * rel[0] + rel[1] * rel[1];
            count += 1;
        }
        if count >= 2 {
            piece_rmse.push((sq / count as f64).sqrt());
        }
    }
    if piece_rmse.is_empty() {
        return Err(EvalError::Invalid {
            detail: "no interval holds two reference samples".into(),
        });
    }
    let meters = piece_rmse.iter().sum::<f64>() / piece_rmse.len() as f64;
    Ok(RteResult { meters, truncated })
}

/// Empirical CDF of a sample: ascending unique values with cumulative
/// probability; the last probability is exactly 1.
pub fn empirical_cdf(errors: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(EvalError::Empty { what: "error sample" });
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(EvalError::Invalid { detail: "non-finite error value".into() });
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut cdf = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        // Ties collapse onto the last rank of the run.
        if i + 1 == n || sorted[i + 1] > e {
            cdf.push((e, (i + 1) as f64 / n as f64));
        }
    }
    Ok(cdf)
}

/// Empirical CDF of pointwise position errors on the common timeline.
pub fn error_cdf(predicted: &Trajectory, truth: &Trajectory) -> Result<Vec<(f64, f64)>> {
    empirical_cdf(&pointwise_errors(predicted, truth)?)
}
