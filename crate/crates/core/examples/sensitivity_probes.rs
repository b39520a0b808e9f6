//! Per-module sensitivity to pruning and binarization, and the knob scaling
//! curve, on the default synthetic setup.

use taskswitch::harness::probes::{
    best_eta, eta_grid, probe_precision, probe_scale, probe_sparsity,
};
use taskswitch::harness::{HarnessConfig, Workbench};

fn main() -> taskswitch::Result<()> {
    let wb = Workbench::build(&HarnessConfig::default())?;
    for (k, tv) in wb.task_vectors()?.iter().enumerate() {
        let eval = |t: &taskswitch::TaskVector| wb.accuracy_with(t, k);
        for (s, p) in probe_sparsity(tv, 0.9, eval)?
            .iter()
            .zip(probe_precision(tv, eval)?)
        {
            println!(
                "{} {:<14} prune drop {:+.3}  binarize drop {:+.3}",
                tv.task_id, s.unit, s.drop, p.drop
            );
        }
        let curve = probe_scale(tv, &eta_grid(), eval)?;
        let drops: Vec<String> = curve.iter().map(|r| format!("{:.2}", r.drop)).collect();
        println!(
            "{} eta curve [{}], best {:?}",
            tv.task_id,
            drops.join(" "),
            best_eta(&curve)
        );
    }
    Ok(())
}
