//! The three alignment criteria on a reference batch and progressively
//! perturbed copies.

use taskswitch::align::{OutputBatch, PerfLoss};

fn main() -> taskswitch::Result<()> {
    let reference = OutputBatch::from_rows(&[
        vec![2.0, -1.0, 0.5],
        vec![-0.5, 1.5, 0.0],
        vec![0.3, 0.2, -1.2],
        vec![1.0, 1.0, -2.0],
    ])?;
    let losses = [
        PerfLoss::Kl {
            temp: PerfLoss::KL_TEMP,
        },
        PerfLoss::Mse,
        PerfLoss::Cka,
    ];
    for eps in [0.0, 0.1, 0.5, 1.0] {
        let rows: Vec<Vec<f64>> = (0..reference.rows)
            .map(|i| {
                reference
                    .row(i)
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v + eps * (((i * 3 + j) % 5) as f64 - 2.0))
                    .collect()
            })
            .collect();
        let compared = OutputBatch::from_rows(&rows)?;
        let vals: Vec<String> = losses
            .iter()
            .map(|l| {
                Ok(format!(
                    "{} {:.5}",
                    l.name(),
                    l.eval(&reference, &compared)?
                ))
            })
            .collect::<taskswitch::Result<_>>()?;
        println!("perturbation {eps}: {}", vals.join(", "));
    }
    Ok(())
}
