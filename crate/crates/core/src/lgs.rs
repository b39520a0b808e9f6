//! Learnable gating sparsification.
//!
//! Each module carries two threshold logits and a scale logit. Thresholds are
//! squashed into the magnitude range of their sign class with
//! `φ(s) = atan(s)/π + 0.5`, giving a two-sided soft mask
//! `M = σ((τ − t₊)/(ρ·r₊)) + σ((−t₋ − τ)/(ρ·r₋))` that hardens to `M > 0.5`.

use std::f64::consts::PI;

use crate::autodiff::tape::{sigmoid, softplus, Tape, Var};
use crate::error::{Error, Result};
use crate::vector::{signed_bounds, Sign, SignedBounds};

/// Added to `ρ·r_max` so constant sign classes do not divide by zero.
pub const RANGE_EPS: f64 = 1e-12;

pub fn phi(s: f64) -> f64 {
    s.atan() / PI + 0.5
}

/// A sign-class threshold and the class range it was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub t: f64,
    pub r_max: f64,
}

/// Maps a logit to a threshold inside `[v_min, v_max]` of the class.
///
/// `None` marks an empty sign class; its gate term is dropped.
pub fn map_threshold(s: f64, bounds: &SignedBounds, sign: Sign) -> Option<Threshold> {
    let (lo, hi) = bounds.class(sign)?;
    let r_max = hi - lo;
    Some(Threshold {
        t: lo + phi(s) * r_max,
        r_max,
    })
}

/// Learnable gate state of one module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateParams {
    pub s_pos: f64,
    pub s_neg: f64,
    pub kappa: f64,
}

impl Default for GateParams {
    /// Midpoint thresholds and unit scale (`softplus(ln(e − 1)) = 1`).
    fn default() -> Self {
        Self {
            s_pos: 0.0,
            s_neg: 0.0,
            kappa: (std::f64::consts::E - 1.0).ln(),
        }
    }
}

impl GateParams {
    pub fn scale(&self) -> f64 {
        softplus(self.kappa)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutput {
    pub soft_mask: Vec<f64>,
    pub scaled_mask: Vec<f64>,
    pub rho: f64,
}

pub fn soft_gate(tau: &[f64], gates: &GateParams, rho: f64) -> Result<GateOutput> {
    soft_gate_with_bounds(tau, &signed_bounds(tau), gates, rho)
}

/// Same as [`soft_gate`] with precomputed bounds of `tau`.
pub fn soft_gate_with_bounds(
    tau: &[f64],
    bounds: &SignedBounds,
    gates: &GateParams,
    rho: f64,
) -> Result<GateOutput> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!(
            "gate temperature must be positive, got {rho}"
        )));
    }
    let pos = map_threshold(gates.s_pos, bounds, Sign::Pos);
    let neg = map_threshold(gates.s_neg, bounds, Sign::Neg);
    let soft_mask: Vec<f64> = tau
        .iter()
        .map(|&x| {
            let p = pos.map_or(0.0, |th| sigmoid((x - th.t) / (rho * th.r_max + RANGE_EPS)));
            let n = neg.map_or(0.0, |th| {
                sigmoid((-th.t - x) / (rho * th.r_max + RANGE_EPS))
            });
            p + n
        })
        .collect();
    let scale = gates.scale();
    let scaled_mask = soft_mask.iter().map(|m| scale * m).collect();
    Ok(GateOutput {
        soft_mask,
        scaled_mask,
        rho,
    })
}

/// Tape variables for one module's gate.
#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub s_pos: Var,
    pub s_neg: Var,
    pub kappa: Var,
}

impl GateVars {
    pub fn new(tape: &mut Tape, g: &GateParams) -> Self {
        Self {
            s_pos: tape.scalar_leaf(g.s_pos),
            s_neg: tape.scalar_leaf(g.s_neg),
            kappa: tape.scalar_leaf(g.kappa),
        }
    }
}

fn threshold_on_tape(tape: &mut Tape, s: Var, lo: f64, r: f64) -> Var {
    let a = tape.atan(s);
    let a = tape.scale(a, r / PI);
    tape.offset(a, lo + 0.5 * r)
}

/// Records the soft mask `M` and the scaled mask `softplus(κ)·M` on `tape`.
pub fn soft_gate_on_tape(
    tape: &mut Tape,
    tau: Var,
    bounds: &SignedBounds,
    vars: &GateVars,
    rho: f64,
) -> (Var, Var) {
    let n = tape.value(tau).len();
    let mut mask: Option<Var> = None;
    if let Some((lo, hi)) = bounds.class(Sign::Pos) {
        let r = hi - lo;
        let t = threshold_on_tape(tape, vars.s_pos, lo, r);
        let d = tape.sub(tau, t);
        let z = tape.scale(d, 1.0 / (rho * r + RANGE_EPS));
        mask = Some(tape.sigmoid(z));
    }
    if let Some((lo, hi)) = bounds.class(Sign::Neg) {
        let r = hi - lo;
        let t = threshold_on_tape(tape, vars.s_neg, lo, r);
        let d = tape.add(tau, t);
        let z = tape.scale(d, -1.0 / (rho * r + RANGE_EPS));
        let term = tape.sigmoid(z);
        mask = Some(match mask {
            Some(m) => tape.add(m, term),
            None => term,
        });
    }
    let mask = mask.unwrap_or_else(|| tape.constant(vec![0.0; n]));
    let scale = tape.softplus(vars.kappa);
    let scaled = tape.mul(mask, scale);
    (mask, scaled)
}

/// `Σ‖M_l‖₁ / Σ n_l` over unscaled masks.
pub fn sparsity_loss<M: AsRef<[f64]>>(masks: &[M]) -> f64 {
    let (s, n) = masks.iter().fold((0.0, 0usize), |(s, n), m| {
        let m = m.as_ref();
        (s + m.iter().map(|x| x.abs()).sum::<f64>(), n + m.len())
    });
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Binary mask `M > 0.5`.
pub fn harden(soft_mask: &[f64]) -> Vec<bool> {
    soft_mask.iter().map(|&m| m > 0.5).collect()
}

/// `ρ(step) = 0.9^⌊step/10⌋`.
pub fn temperature_schedule(step: usize) -> f64 {
    0.9f64.powi((step / 10) as i32)
}
