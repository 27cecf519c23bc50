//! Verify every analytic gradient against central finite differences: each
//! layer kind in isolation, then the full model loss under all six ablation
//! variants.
//!
//! Run: cargo run --example gradient_check

use bodynet::diffnet::layer_suite;
use bodynet::model::loss_gradcheck;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut checks = layer_suite(0)?;
    for row in 1..=6 {
        checks.push(loss_gradcheck(row, 0)?);
    }

    println!("{:<22} {:>14} {:>10}  worst parameter", "component", "max rel err", "threshold");
    let mut all_ok = true;
    for c in &checks {
        println!(
            "{:<22} {:>14.3e} {:>10.0e}  {}{}",
            c.component,
            c.max_rel_err,
            c.threshold,
            c.worst_param,
            if c.passed() { "" } else { "  FAIL" }
        );
        all_ok &= c.passed();
    }
    println!("\n{}", if all_ok { "all gradients verified" } else { "GRADIENT MISMATCH" });
    Ok(())
}
