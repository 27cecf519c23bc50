//! Classic step-counting dead reckoning from a single phone IMU, compared
//! against the true walk.
//!
//! Run: cargo run --example pdr_baseline

use bodynet::dataio::WalkingMode;
use bodynet::evaluator::pdr::STEP_LENGTH_M;
use bodynet::evaluator::{ate, pdr_baseline, Trajectory};
use bodynet::synthgen::{generate, preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let script = preset(WalkingMode::STW)?.with_duration(120.0)?;
    let seq = generate(&script, 3)?;
    let phone = &seq.streams[0];

    let path = pdr_baseline(phone, STEP_LENGTH_M)?;
    let truth = Trajectory::from_truth(&seq.truth)?;

    println!(
        "{} steps detected over {:.0} s ({:.2} m per step)",
        path.len() - 1,
        phone.last().unwrap().t - phone[0].t,
        STEP_LENGTH_M
    );
    println!(
        "dead-reckoned endpoint ({:+.2}, {:+.2}) m, truth ({:+.2}, {:+.2}) m",
        path.endpoint()[0],
        path.endpoint()[1],
        truth.endpoint()[0],
        truth.endpoint()[1]
    );

    // Dead reckoning starts at the origin; anchor it to the truth start
    // before comparing.
    let anchored = path.translated(truth.position_at(path.start_time().max(truth.start_time()))?);
    println!("ATE after anchoring: {:.3} m", ate(&anchored, &truth)?);
    Ok(())
}
