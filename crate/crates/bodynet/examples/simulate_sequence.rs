//! Generate one synthetic walking sequence and write it to disk.
//!
//! Run: cargo run --example simulate_sequence

use bodynet::dataio::WalkingMode;
use bodynet::synthgen::{generate, preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let script = preset(WalkingMode::MVW)?.with_duration(90.0)?;
    let seq = generate(&script, 42)?;

    println!("sequence {} ({})", seq.manifest.sequence_id, seq.manifest.mode);
    for (entry, stream) in seq.manifest.devices.iter().zip(&seq.streams) {
        let span = stream.last().unwrap().t - stream[0].t;
        println!(
            "  {:<8} {:>6} samples at {:>5.0} Hz over {:.1} s",
            entry.name,
            stream.len(),
            entry.rate_hz,
            span
        );
    }
    let end = seq.truth.last().unwrap().position;
    println!("  truth    {:>6} poses, walk ends at ({:.2}, {:.2}) m", seq.truth.len(), end[0], end[1]);

    let dir = std::env::temp_dir().join("bodynet-example-sequence");
    seq.save(&dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}
