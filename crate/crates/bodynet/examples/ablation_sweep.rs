//! Build all six ablation variants of the network and show how the loss
//! composition and parameter count change as components switch on.
//!
//! Run: cargo run --example ablation_sweep

use bodynet::dataio::{make_windows, resample, DeviceWindow, WalkingMode};
use bodynet::diffnet::Graph;
use bodynet::model::{batch_inputs, AblationConfig, LossWeights, ModelConfig, Network};
use bodynet::synthgen::{generate, preset};
use bodynet::ParameterSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let script = preset(WalkingMode::STW)?.with_duration(30.0)?;
    let seq = generate(&script, 5)?;
    let streams: Vec<_> =
        seq.streams.iter().map(|s| resample(s, 25.0)).collect::<Result<_, _>>()?;
    let windows = make_windows(&streams, &seq.truth, 64, 32)?;
    let batch: Vec<&DeviceWindow> = windows.iter().take(8).collect();
    let (inputs, labels) = batch_inputs(&batch)?;

    let cfg = ModelConfig {
        window: 64,
        channels: vec![4, 6, 6, 8, 8, 8],
        gru_hidden: 8,
        d_loc: 8,
        heads: 2,
        loc_hidden: 8,
        ..ModelConfig::default()
    };
    let weights = LossWeights::default();

    println!(
        "{:<52} {:>7} {:>9} {:>9} {:>9}",
        "variant", "tensors", "v_mse", "contrast", "orthog"
    );
    for row in 1..=6 {
        let ablation = AblationConfig::variant(row)?;
        let net = Network::new(cfg.clone(), ablation)?;
        let mut params = ParameterSet::new(1);
        net.init(&mut params, &mut ChaCha8Rng::seed_from_u64(0))?;

        let mut g = Graph::new(&mut params, ChaCha8Rng::seed_from_u64(0), false);
        let nodes: Vec<_> = inputs
            .iter()
            .map(|t| g.tape.leaf(t.shape().to_vec(), t.data().to_vec()))
            .collect();
        let fwd = net.forward(&mut g, &nodes, &weights)?;
        let y = g.tape.leaf(labels.shape().to_vec(), labels.data().to_vec());
        let (_, parts) = net.total_loss(&mut g, &fwd, y, &weights)?;

        println!(
            "{:<52} {:>7} {:>9.4} {:>9.4} {:>9.4}",
            format!("{row}: {}", ablation.label()),
            params.len(),
            parts.v,
            parts.con,
            parts.orth
        );
    }
    println!("\nzero contrast/orthog entries mean the variant omits that objective");
    Ok(())
}
