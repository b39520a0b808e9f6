//! Bit-width adaptive selection: an asymmetric uniform quantizer and a
//! softmax mixture over the candidate widths `{1, 2, 4, 8}`.

use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::vector::SignedBounds;

/// Candidate bit-widths, ascending.
pub const BIT_WIDTHS: [u32; 4] = [1, 2, 4, 8];
pub const MAX_BITS: f64 = 8.0;

/// Asymmetric quantizer over `[−range_neg, range_pos]` with `2^b` bins.
///
/// Any width in `1..=8` is accepted (the storage format can carry all of
/// them); the learnable mixture only ever picks from [`BIT_WIDTHS`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantSpec {
    pub bits: u32,
    pub range_neg: f64,
    pub range_pos: f64,
}

impl QuantSpec {
    pub fn new(bits: u32, range_neg: f64, range_pos: f64) -> Result<Self> {
        if !(1..=8).contains(&bits) {
            return Err(Error::Domain(format!("unsupported bit-width {bits}")));
        }
        if !(range_neg >= 0.0 && range_pos >= 0.0) || !(range_neg + range_pos).is_finite() {
            return Err(Error::Domain(
                "quantizer ranges must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            bits,
            range_neg,
            range_pos,
        })
    }

    /// Ranges taken from the largest positive and negative magnitudes.
    pub fn from_bounds(bits: u32, b: &SignedBounds) -> Result<Self> {
        Self::new(bits, b.v_max_neg, b.v_max_pos)
    }

    pub fn levels(&self) -> u32 {
        1 << self.bits
    }

    /// `δ = (range_pos + range_neg) / 2^b`.
    pub fn step(&self) -> f64 {
        (self.range_pos + self.range_neg) / f64::from(self.levels())
    }

    /// Zero-width range: every input lands on the single point `−range_neg`.
    pub fn is_degenerate(&self) -> bool {
        self.step() == 0.0
    }

    pub fn center(&self, index: u32) -> f64 {
        -self.range_neg + (f64::from(index) + 0.5) * self.step()
    }

    /// Bin index `clamp(⌈(x + range_neg)/δ⌉, 1, 2^b) − 1`.
    pub fn index(&self, x: f64) -> u32 {
        let delta = self.step();
        if delta == 0.0 || x.is_nan() {
            return 0;
        }
        let k = ((x + self.range_neg) / delta).ceil();
        let k = k.clamp(1.0, f64::from(self.levels()));
        k as u32 - 1
    }

    pub fn quantize_value(&self, x: f64) -> f64 {
        self.center(self.index(x))
    }

    /// Straight-through derivative: identity inside the range, zero outside.
    pub fn ste_grad(&self, x: f64) -> f64 {
        if x >= -self.range_neg && x <= self.range_pos {
            1.0
        } else {
            0.0
        }
    }
}

/// Quantizes every element, returning `(bin centers, bin indices)`.
pub fn quantize(tau: &[f64], spec: &QuantSpec) -> (Vec<f64>, Vec<u32>) {
    tau.iter()
        .map(|&x| {
            let i = spec.index(x);
            (spec.center(i), i)
        })
        .unzip()
}

/// Learnable bit-width logits, one per entry of [`BIT_WIDTHS`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BitLogits {
    pub w: [f64; 4],
}

impl BitLogits {
    /// `softmax(w / ω)`.
    pub fn probabilities(&self, omega: f64) -> [f64; 4] {
        let z: Vec<f64> = self.w.iter().map(|w| w / omega).collect();
        let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|x| (x - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        [e[0] / s, e[1] / s, e[2] / s, e[3] / s]
    }
}

/// `Σ_i softmax(w/ω)_i · Q(τ; W_i)` with ranges from the raw `tau`.
pub fn mixed_quantize(
    tau: &[f64],
    bounds: &SignedBounds,
    logits: &BitLogits,
    omega: f64,
) -> Result<Vec<f64>> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!(
            "bit temperature must be positive, got {omega}"
        )));
    }
    let p = logits.probabilities(omega);
    let mut out = vec![0.0; tau.len()];
    for (&bits, &pi) in BIT_WIDTHS.iter().zip(&p) {
        let spec = QuantSpec::from_bounds(bits, bounds)?;
        for (o, &x) in out.iter_mut().zip(tau) {
            *o += pi * spec.quantize_value(x);
        }
    }
    Ok(out)
}

/// Expected bit-width `Σ_i softmax(w/ω)_i · W_i`.
pub fn mean_bitwidth(logits: &BitLogits, omega: f64) -> f64 {
    logits
        .probabilities(omega)
        .iter()
        .zip(BIT_WIDTHS)
        .map(|(p, b)| p * f64::from(b))
        .sum()
}

/// Width with the largest logit; ties go to the smaller width.
pub fn select_bitwidth(logits: &BitLogits) -> u32 {
    let mut best = 0;
    for i in 1..4 {
        if logits.w[i] > logits.w[best] {
            best = i;
        }
    }
    BIT_WIDTHS[best]
}

/// The four fixed quantizations of a module, stacked as an `n × 4` matrix
/// so the mixture is a single matrix-vector product on the tape.
#[derive(Debug, Clone)]
pub struct QuantStack {
    pub n: usize,
    pub stacked: Vec<f64>,
}

impl QuantStack {
    pub fn new(tau: &[f64], bounds: &SignedBounds) -> Result<Self> {
        let specs = BIT_WIDTHS
            .iter()
            .map(|&b| QuantSpec::from_bounds(b, bounds))
            .collect::<Result<Vec<_>>>()?;
        let mut stacked = Vec::with_capacity(tau.len() * 4);
        for &x in tau {
            for s in &specs {
                stacked.push(s.quantize_value(x));
            }
        }
        Ok(Self {
            n: tau.len(),
            stacked,
        })
    }
}

/// Records `softmax(w/ω)` as a `1 × 4` row.
pub fn probabilities_on_tape(tape: &mut Tape, w: Var, omega: f64) -> Var {
    let z = tape.scale(w, 1.0 / omega);
    let z = tape.reshape(z, 1, 4);
    tape.softmax_rows(z)
}

/// Records the mixed quantization `Q_M(τ)` (an `n × 1` column).
pub fn mixed_quantize_on_tape(tape: &mut Tape, stack: &QuantStack, probs: Var) -> Var {
    let q = tape.matrix_constant(stack.stacked.clone(), stack.n, 4);
    let p = tape.reshape(probs, 4, 1);
    tape.matmul(q, p)
}

/// Records the expected bit-width `w̄`.
pub fn mean_bitwidth_on_tape(tape: &mut Tape, probs: Var) -> Var {
    let widths = tape.matrix_constant(BIT_WIDTHS.iter().map(|&b| f64::from(b)).collect(), 4, 1);
    tape.matmul(probs, widths)
}
