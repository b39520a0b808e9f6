//! Output-alignment losses between a reference (fine-tuned) model and a
//! compressed one: temperature-scaled KL, MSE and linear CKA.

use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};

/// `B × C` matrix of logits, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputBatch {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl OutputBatch {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Domain(format!(
                "output batch {rows}x{cols} with {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn check_same(&self, other: &OutputBatch) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Domain(format!(
                "output shapes differ: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

fn softmax(row: &[f64], temp: f64) -> Vec<f64> {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| ((x - mx) / temp).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Row-wise temperature softmax of the reference logits.
pub fn soft_targets(reference: &OutputBatch, temp: f64) -> Vec<f64> {
    (0..reference.rows)
        .flat_map(|i| softmax(reference.row(i), temp))
        .collect()
}

/// `(T²/B) Σ_i KL(softmax(ref_i/T) ‖ softmax(cmp_i/T))`.
pub fn kl_loss(reference: &OutputBatch, compared: &OutputBatch, temp: f64) -> Result<f64> {
    reference.check_same(compared)?;
    if !(temp > 0.0) {
        return Err(Error::Domain(format!(
            "KL temperature must be positive, got {temp}"
        )));
    }
    let mut total = 0.0;
    for i in 0..reference.rows {
        let q = softmax(reference.row(i), temp);
        let p = softmax(compared.row(i), temp);
        total += q
            .iter()
            .zip(&p)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, p)| q * (q.ln() - p.ln()))
            .sum::<f64>();
    }
    Ok(temp * temp * total / reference.rows as f64)
}

/// `(1/B) Σ_i ‖ref_i − cmp_i‖²`.
pub fn mse_loss(reference: &OutputBatch, compared: &OutputBatch) -> Result<f64> {
    reference.check_same(compared)?;
    let s: f64 = reference
        .data
        .iter()
        .zip(&compared.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / reference.rows as f64)
}

/// Column-centered copy of a `rows × cols` matrix (`H·F`).
fn center_columns(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = data.to_vec();
    for j in 0..cols {
        let mean = (0..rows).map(|i| data[i * cols + j]).sum::<f64>() / rows as f64;
        for i in 0..rows {
            out[i * cols + j] -= mean;
        }
    }
    out
}

/// `Aᵀ B` for two `rows × cols` matrices, giving `cols × cols`.
fn cross(a: &[f64], b: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols * cols];
    for i in 0..rows {
        for p in 0..cols {
            let x = a[i * cols + p];
            for q in 0..cols {
                out[p * cols + q] += x * b[i * cols + q];
            }
        }
    }
    out
}

fn frob(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Linear CKA loss and whether its denominator vanished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cka {
    pub loss: f64,
    pub degenerate: bool,
}

/// `1 − ‖FᵀHF̂‖²_F / (‖FᵀHF‖_F ‖F̂ᵀHF̂‖_F)`; a zero-variance side scores 1.
pub fn cka(reference: &OutputBatch, compared: &OutputBatch) -> Result<Cka> {
    reference.check_same(compared)?;
    if reference.rows < 2 {
        return Err(Error::Domain("CKA needs at least two rows".into()));
    }
    let (b, c) = (reference.rows, reference.cols);
    let fc = center_columns(&reference.data, b, c);
    let gc = center_columns(&compared.data, b, c);
    let num = frob(&cross(&fc, &gc, b, c)).powi(2);
    let den = frob(&cross(&fc, &fc, b, c)) * frob(&cross(&gc, &gc, b, c));
    if !(den > 0.0) {
        return Ok(Cka {
            loss: 1.0,
            degenerate: true,
        });
    }
    Ok(Cka {
        loss: 1.0 - num / den,
        degenerate: false,
    })
}

pub fn cka_loss(reference: &OutputBatch, compared: &OutputBatch) -> Result<f64> {
    cka(reference, compared).map(|c| c.loss)
}

/// Which alignment criterion drives the performance-preservation term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerfLoss {
    Kl { temp: f64 },
    Mse,
    Cka,
}

impl PerfLoss {
    /// Default KL temperature.
    pub const KL_TEMP: f64 = 4.0;

    /// λ presets swept per criterion.
    pub fn lambda_presets(&self) -> [f64; 5] {
        match self {
            PerfLoss::Kl { .. } => [0.1, 0.3, 0.5, 0.7, 0.9],
            PerfLoss::Mse => [0.01, 0.05, 0.09, 0.13, 0.17],
            PerfLoss::Cka => [1.0, 3.0, 5.0, 7.0, 9.0],
        }
    }

    pub fn default_lambda(&self) -> f64 {
        match self {
            PerfLoss::Kl { .. } => 0.3,
            PerfLoss::Mse => 0.05,
            PerfLoss::Cka => 3.0,
        }
    }

    pub fn parse(name: &str, temp: f64) -> Result<Self> {
        match name {
            "kl" => Ok(PerfLoss::Kl { temp }),
            "mse" => Ok(PerfLoss::Mse),
            "cka" => Ok(PerfLoss::Cka),
            other => Err(Error::Config(format!("unknown alignment loss `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PerfLoss::Kl { .. } => "kl",
            PerfLoss::Mse => "mse",
            PerfLoss::Cka => "cka",
        }
    }

    pub fn eval(&self, reference: &OutputBatch, compared: &OutputBatch) -> Result<f64> {
        match *self {
            PerfLoss::Kl { temp } => kl_loss(reference, compared, temp),
            PerfLoss::Mse => mse_loss(reference, compared),
            PerfLoss::Cka => cka_loss(reference, compared),
        }
    }

    /// Records the loss of `compared` (a `B × C` tape matrix) against the
    /// constant `reference`.
    pub fn on_tape(&self, tape: &mut Tape, reference: &OutputBatch, compared: Var) -> Var {
        let (b, c) = (reference.rows, reference.cols);
        match *self {
            PerfLoss::Kl { temp } => {
                let q = soft_targets(reference, temp);
                let entropy: f64 = q.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum();
                let z = tape.scale(compared, 1.0 / temp);
                let logp = tape.log_softmax_rows(z);
                let qv = tape.matrix_constant(q, b, c);
                let cross = tape.mul(qv, logp);
                let cross = tape.sum(cross);
                let neg = tape.scale(cross, -temp * temp / b as f64);
                tape.offset(neg, temp * temp * entropy / b as f64)
            }
            PerfLoss::Mse => {
                let r = tape.matrix_constant(reference.data.clone(), b, c);
                let d = tape.sub(compared, r);
                let sq = tape.square(d);
                let s = tape.sum(sq);
                tape.scale(s, 1.0 / b as f64)
            }
            PerfLoss::Cka => {
                let fc = center_columns(&reference.data, b, c);
                let den_ref = frob(&cross(&fc, &fc, b, c));
                // H is symmetric and idempotent, so FᵀHF̂ = (HF)ᵀ(HF̂) and F̂ᵀHF̂ = (HF̂)ᵀ(HF̂).
                let mut h = vec![-1.0 / b as f64; b * b];
                for i in 0..b {
                    h[i * b + i] += 1.0;
                }
                let hv = tape.matrix_constant(h, b, b);
                let gc = tape.matmul(hv, compared);
                let fct = tape.matrix_constant(fc, b, c);
                let fct = tape.transpose(fct);
                let a = tape.matmul(fct, gc);
                let a2 = tape.square(a);
                let num = tape.sum(a2);
                let gct = tape.transpose(gc);
                let gg = tape.matmul(gct, gc);
                let gg2 = tape.square(gg);
                let gg2 = tape.sum(gg2);
                if den_ref == 0.0 || tape.scalar(gg2) == 0.0 {
                    return tape.constant(vec![1.0]);
                }
                let den = tape.sqrt(gg2);
                let den = tape.scale(den, den_ref);
                let ratio = tape.div(num, den);
                let neg = tape.neg(ratio);
                tape.offset(neg, 1.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::fd::fd_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, c: usize) -> OutputBatch {
        OutputBatch::new(
            b,
            c,
            (0..b * c).map(|_| rng.sample(StandardNormal)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn kl_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_batch(&mut rng, 5, 4);
        assert!(kl_loss(&r, &r, 4.0).unwrap().abs() < 1e-15);
        let a = OutputBatch::new(1, 2, vec![1.0, 0.0]).unwrap();
        let b = OutputBatch::new(1, 2, vec![0.0, 1.0]).unwrap();
        let q = [1.0 / (1.0 + (-1f64).exp()), 1.0 / (1.0 + 1f64.exp())];
        let oracle = q[0] * (q[0] / q[1]).ln() + q[1] * (q[1] / q[0]).ln();
        let got = kl_loss(&a, &b, 1.0).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.4621).abs() < 1e-4);
        // scaling logits by T at temperature T gives the T = 1 distributions
        let a4 = OutputBatch::new(1, 2, vec![4.0, 0.0]).unwrap();
        let b4 = OutputBatch::new(1, 2, vec![0.0, 4.0]).unwrap();
        assert!((kl_loss(&a4, &b4, 4.0).unwrap() - 16.0 * got).abs() < 1e-12);
    }

    #[test]
    fn mse_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_batch(&mut rng, 4, 3);
        assert_eq!(mse_loss(&r, &r).unwrap(), 0.0);
        let mut shifted = r.clone();
        for i in 0..4 {
            shifted.data[i * 3 + (i % 3)] += 1.0;
        }
        assert!((mse_loss(&r, &shifted).unwrap() - 1.0).abs() < 1e-12);
        let c = random_batch(&mut rng, 4, 3);
        let mut acc = 0.0;
        for i in 0..12 {
            acc += (r.data[i] - c.data[i]).powi(2);
        }
        assert!((mse_loss(&r, &c).unwrap() - acc / 4.0).abs() < 1e-12);
    }

    #[test]
    fn cka_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_batch(&mut rng, 16, 3);
        assert!(cka_loss(&r, &r).unwrap().abs() < 1e-12);
        // rotation in the plane of the first two columns
        let (s, c) = (0.6f64, 0.8f64);
        let mut rot = r.clone();
        for i in 0..16 {
            let (x, y) = (r.data[i * 3], r.data[i * 3 + 1]);
            rot.data[i * 3] = c * x - s * y;
            rot.data[i * 3 + 1] = s * x + c * y;
        }
        assert!(cka_loss(&r, &rot).unwrap().abs() < 1e-10);
        // isotropic scaling and constant row offsets
        let mut t = r.clone();
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = 3.5 * *v + [1.0, -2.0, 0.5][i % 3];
        }
        assert!(cka_loss(&r, &t).unwrap().abs() < 1e-10);
        // independent noise
        let big_a = random_batch(&mut rng, 256, 4);
        let big_b = random_batch(&mut rng, 256, 4);
        let l = cka_loss(&big_a, &big_b).unwrap();
        assert!(l > 0.8 && l <= 1.0, "{l}");
        // degenerate
        let flat = OutputBatch::new(3, 3, vec![1.0; 9]).unwrap();
        let d = cka(&r_rows(&r, 3), &flat).unwrap();
        assert!(d.degenerate && d.loss == 1.0);
        assert!(cka_loss(&r_rows(&r, 1), &r_rows(&r, 1)).is_err());
    }

    fn r_rows(r: &OutputBatch, n: usize) -> OutputBatch {
        OutputBatch::new(n, r.cols, r.data[..n * r.cols].to_vec()).unwrap()
    }

    #[test]
    fn tape_losses_match_plain_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for loss in [
            PerfLoss::Kl { temp: 4.0 },
            PerfLoss::Kl { temp: 1.0 },
            PerfLoss::Mse,
            PerfLoss::Cka,
        ] {
            let r = random_batch(&mut rng, 6, 3);
            let c0 = random_batch(&mut rng, 6, 3);
            let plain = |l: &[Vec<f64>]| {
                let c = OutputBatch::new(6, 3, l[0].clone()).unwrap();
                loss.eval(&r, &c).unwrap()
            };
            let mut t = Tape::new();
            let x = t.leaf(c0.data.clone());
            let xm = t.reshape(x, 6, 3);
            let out = loss.on_tape(&mut t, &r, xm);
            assert!(
                (t.scalar(out) - plain(&[c0.data.clone()])).abs() < 1e-12,
                "{loss:?}"
            );
            let g = t.backward(out).unwrap();
            let rep = fd_check(
                plain,
                &[c0.data.clone()],
                &[g.wrt(x, 18).unwrap()],
                1e-5,
                1e-8,
            );
            assert!(rep.max_rel < 1e-4, "{loss:?}: {}", rep.max_rel);
        }
    }

    #[test]
    fn kl_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = random_batch(&mut rng, 3, 5);
            let b = random_batch(&mut rng, 3, 5);
            assert!(kl_loss(&a, &b, 4.0).unwrap() >= 0.0);
        }
    }
}
