//! The learnable gate and the bit-width mixture, from soft to hard as the
//! temperatures shrink.

use taskswitch::bas::{
    mean_bitwidth, mixed_quantize, quantize, select_bitwidth, BitLogits, QuantSpec,
};
use taskswitch::lgs::{harden, soft_gate, temperature_schedule, GateParams};
use taskswitch::vector::signed_bounds;

fn main() -> taskswitch::Result<()> {
    let tau = [0.8, -0.1, 0.3, -0.7, 0.05, -0.4, 0.6, -0.02];
    let gates = GateParams {
        s_pos: 0.5,
        s_neg: -0.5,
        ..Default::default()
    };
    for step in [0, 50, 100, 200, 499] {
        let rho = temperature_schedule(step);
        let g = soft_gate(&tau, &gates, rho)?;
        let soft: Vec<String> = g.soft_mask.iter().map(|m| format!("{m:.3}")).collect();
        println!("step {step:>3} rho {rho:.2e}: [{}]", soft.join(" "));
    }
    let g = soft_gate(&tau, &gates, temperature_schedule(499))?;
    println!("hard mask {:?}", harden(&g.soft_mask));

    let bounds = signed_bounds(&tau);
    for bits in [1, 2, 4, 8] {
        let spec = QuantSpec::from_bounds(bits, &bounds)?;
        let (values, bins) = quantize(&tau, &spec);
        println!("{bits}-bit bins {bins:?} values {values:.3?}");
    }
    let logits = BitLogits {
        w: [0.0, 1.5, 0.5, -1.0],
    };
    for omega in [1.0, 0.1, 1e-3] {
        let mixed = mixed_quantize(&tau, &bounds, &logits, omega)?;
        println!(
            "omega {omega}: probs {:.3?}, mean bits {:.3}, mixture {mixed:.3?}",
            logits.probabilities(omega),
            mean_bitwidth(&logits, omega)
        );
    }
    println!("selected width {}", select_bitwidth(&logits));
    Ok(())
}
