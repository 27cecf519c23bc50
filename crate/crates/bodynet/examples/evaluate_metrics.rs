//! Trajectory metrics without any training: integrate window velocity labels
//! into a path, perturb it, and measure ATE, RTE, and the error CDF.
//!
//! Run: cargo run --example evaluate_metrics

use bodynet::dataio::{make_windows, resample, WalkingMode};
use bodynet::evaluator::{ate, error_cdf, label_trajectory, rte, Trajectory};
use bodynet::synthgen::{generate, preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let script = preset(WalkingMode::MVW)?.with_duration(180.0)?;
    let seq = generate(&script, 11)?;
    let streams: Vec<_> =
        seq.streams.iter().map(|s| resample(s, 25.0)).collect::<Result<_, _>>()?;
    let windows = make_windows(&streams, &seq.truth, 100, 25)?;

    let truth = Trajectory::from_truth(&seq.truth)?;
    let y0 = truth.position_at(windows[0].t_start)?;

    // A perfect model would predict each window's label velocity; integrating
    // those reconstructs the walk up to within-window averaging.
    let ideal = label_trajectory(&windows, y0)?;
    println!(
        "truth path {:.1} m, label-integrated path {:.1} m",
        truth.path_length(),
        ideal.path_length()
    );
    println!("ideal  ATE {:.3} m   RTE(60 s) {:.3} m", ate(&ideal, &truth)?, rte(&ideal, &truth, 60.0)?.meters);

    // The same path dragged sideways by a growing drift.
    let drifted = Trajectory::new(
        ideal.timestamps().to_vec(),
        ideal
            .timestamps()
            .iter()
            .zip(ideal.positions())
            .map(|(t, p)| [p[0] + 0.05 * (t - ideal.start_time()), p[1]])
            .collect(),
    )?;
    println!(
        "drift  ATE {:.3} m   RTE(60 s) {:.3} m",
        ate(&drifted, &truth)?,
        rte(&drifted, &truth, 60.0)?.meters
    );

    let cdf = error_cdf(&drifted, &truth)?;
    for q in [0.5, 0.9, 0.99] {
        let (e, p) = cdf.iter().find(|&&(_, p)| p >= q).copied().unwrap();
        println!("p{:<4} error {:.3} m (cdf {:.3})", (q * 100.0) as u32, e, p);
    }
    Ok(())
}
