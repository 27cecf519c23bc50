//! The ingest pipeline step by step: load a sequence from disk, recover
//! per-device clock offsets from the synchronization jumps, resample all
//! streams to a common rate, and cut labeled training windows.
//!
//! Run: cargo run --example pipeline_windows

use bodynet::dataio::{
    align_by_jumps, apply_offset, load_manifest, load_stream, load_truth, make_windows, resample,
    WalkingMode,
};
use bodynet::synthgen::{generate, preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A sequence on disk is a directory of CSVs plus a manifest.
    let dir = std::env::temp_dir().join("bodynet-example-pipeline");
    let script = preset(WalkingMode::STW)?.with_duration(60.0)?;
    generate(&script, 7)?.save(&dir)?;

    let manifest = load_manifest(&dir.join("manifest.toml"))?;
    manifest.verify_files(&dir)?;
    let streams: Vec<_> = manifest
        .devices
        .iter()
        .map(|d| load_stream(&dir.join(&d.path)))
        .collect::<Result<_, _>>()?;
    let truth = load_truth(&dir.join(&manifest.truth_path))?;

    // Devices sample on their own clocks; the shared jump bumps near the
    // sequence edges pin down each offset.
    let offsets = align_by_jumps(&streams, &truth)?;
    for (d, off) in manifest.devices.iter().zip(&offsets) {
        println!("{:<8} clock offset {:+.4} s", d.name, off);
    }

    let rate = 25.0;
    let aligned: Vec<_> = streams
        .iter()
        .zip(&offsets)
        .map(|(s, &off)| resample(&apply_offset(s, off), rate))
        .collect::<Result<_, _>>()?;

    // 4 s windows, 1 s apart, each labeled with the mean truth velocity.
    let windows = make_windows(&aligned, &truth, 100, 25)?;
    println!(
        "\n{} windows of {} samples x {} devices at {rate} Hz",
        windows.len(),
        windows[0].device_data[0].len(),
        windows[0].device_data.len()
    );
    for w in windows.iter().step_by(windows.len() / 5) {
        println!(
            "  t = {:5.1} s  label velocity ({:+.3}, {:+.3}) m/s",
            w.t_start, w.v_label[0], w.v_label[1]
        );
    }
    Ok(())
}
