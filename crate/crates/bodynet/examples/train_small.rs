//! Train a small model on synthetic data and inspect the loss breakdown.
//!
//! Run: cargo run --example train_small

use bodynet::dataio::{make_windows, resample, DeviceWindow, WalkingMode};
use bodynet::model::ModelConfig;
use bodynet::synthgen::{generate, preset};
use bodynet::trainer::{load_trained, train, TrainConfig};

fn windows_for(mode: WalkingMode, seed: u64) -> Result<Vec<DeviceWindow>, Box<dyn std::error::Error>> {
    let script = preset(mode)?.with_duration(120.0)?;
    let seq = generate(&script, seed)?;
    let streams: Vec<_> =
        seq.streams.iter().map(|s| resample(s, 25.0)).collect::<Result<_, _>>()?;
    Ok(make_windows(&streams, &seq.truth, 64, 16)?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut train_set = windows_for(WalkingMode::STW, 1)?;
    train_set.extend(windows_for(WalkingMode::MVW, 2)?);
    let val_set = windows_for(WalkingMode::STW, 3)?;
    println!("{} training windows, {} validation windows", train_set.len(), val_set.len());

    let cfg = TrainConfig {
        learning_rate: 3e-4,
        batch_size: 32,
        max_epochs: 3,
        model: ModelConfig {
            window: 64,
            channels: vec![4, 6, 6, 8, 8, 8],
            gru_hidden: 8,
            d_loc: 8,
            heads: 2,
            loc_hidden: 8,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    println!("variant: {}\nconfig digest: {}\n", cfg.ablation.label(), cfg.digest());

    let ckpt = std::env::temp_dir().join("bodynet-example-train.ckpt");
    let report = train(&cfg, &train_set, &val_set, &ckpt)?;

    println!("epoch  train_total  val_total  val_v_mse");
    for e in &report.epochs {
        println!(
            "{:>5}  {:>11.4}  {:>9.4}  {:>9.4}",
            e.epoch, e.train.total, e.val.total, e.val.v
        );
    }
    println!(
        "\nbest epoch {} after {} steps; checkpoint at {}",
        report.best_epoch,
        report.steps,
        ckpt.display()
    );

    // A checkpoint restores the exact weights and the config that made them.
    let (params, restored) = load_trained(&ckpt)?;
    println!("reloaded {} tensors, digest {}", params.len(), restored.digest());
    Ok(())
}
