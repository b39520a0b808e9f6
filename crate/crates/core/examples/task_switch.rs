//! Rule-based task switch: prune by sign-aware quantiles, keep the signs and
//! one knob per module that restores the pruned vector's norm.

use taskswitch::tswitch::build_switch;
use taskswitch::vector::l2_norm;

fn main() -> taskswitch::Result<()> {
    let tau = [0.5, -0.2, 0.1, -0.9, 0.05, -0.03, 0.4, -0.6];
    for alpha in [0.0, 0.5, 0.9] {
        let sw = build_switch("demo", &tau, alpha)?;
        let rec = sw.reconstruct();
        let kept: Vec<f64> = tau
            .iter()
            .zip(&sw.mask)
            .map(|(&x, &m)| if m { x } else { 0.0 })
            .collect();
        println!(
            "alpha {alpha}: nnz {}, knob {:.5}, |pruned| {:.5}, |switch| {:.5}, {} bits vs {} dense",
            sw.nnz(),
            sw.knob,
            l2_norm(&kept),
            l2_norm(&rec),
            sw.storage_bits(),
            64 * tau.len()
        );
        println!("  reconstruction {rec:?}");
    }
    Ok(())
}
