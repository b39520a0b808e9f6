//! Learnable low-rank projection `L` (`r × e`) for neighbour retrieval.
//!
//! Training minimizes, over queries `x` with task label `k`,
//! `−mean log(Σ_{z∈N_x, task(z)=k} d⁻¹ / Σ_{z∈N_x} d⁻¹)` where `N_x` are the
//! `C` nearest references under the current projection and
//! `d = ‖L(x − z)‖₂`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::merge::knn::nearest_references;
use crate::optim::Adam;

/// Distance floor for inverse-distance weights.
pub const DIST_EPS: f64 = 1e-8;
/// Floor on the same-task weight fraction when no neighbour shares the task.
pub const RATIO_FLOOR: f64 = 1e-8;

/// Row-major `r × e` projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Projection {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Domain(format!(
                "projection of shape {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("projection entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(e: usize) -> Self {
        let mut data = vec![0.0; e * e];
        for i in 0..e {
            data[i * e + i] = 1.0;
        }
        Self {
            rows: e,
            cols: e,
            data,
        }
    }

    /// I.i.d. Gaussian entries scaled by `1/√e`.
    pub fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                s * z
            })
            .collect::<Vec<f64>>();
        Self { rows, cols, data }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    /// Entries rounded through `f32`, as stored in index files.
    pub fn to_f32_precision(&self) -> Self {
        Self {
            data: self.data.iter().map(|&v| f64::from(v as f32)).collect(),
            ..self.clone()
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "feature dimension mismatch");
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `‖L a − L b‖₂`.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.apply(&d).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    pub rank: usize,
    pub neighbors: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            rank: 32,
            neighbors: 10,
            epochs: 100,
            lr: 0.5,
            seed: 0,
        }
    }
}

/// Loss for one query given its neighbours' tasks and distances.
pub fn query_loss(label: usize, neighbors: &[(usize, f64)]) -> f64 {
    let (same, all) = neighbors.iter().fold((0.0, 0.0), |(s, a), &(task, d)| {
        let inv = 1.0 / d.max(DIST_EPS);
        (if task == label { s + inv } else { s }, a + inv)
    });
    -(same / all).max(RATIO_FLOOR).ln()
}

/// Mean loss over all queries and its gradient with respect to `L`.
pub fn loss_and_grad(
    proj: &Projection,
    queries: &[Vec<f64>],
    labels: &[usize],
    refs: &[Vec<f64>],
    ref_labels: &[usize],
    neighbors: usize,
) -> (f64, Vec<f64>) {
    let projected: Vec<Vec<f64>> = refs.iter().map(|r| proj.apply(r)).collect();
    let mut grad = vec![0.0; proj.data.len()];
    let mut total = 0.0;
    for (x, &label) in queries.iter().zip(labels) {
        let px = proj.apply(x);
        let nn = nearest_references(&px, &projected, neighbors);
        let dist: Vec<f64> = nn
            .iter()
            .map(|&z| {
                px.iter()
                    .zip(&projected[z])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let inv: Vec<f64> = dist.iter().map(|d| 1.0 / d.max(DIST_EPS)).collect();
        let all: f64 = inv.iter().sum();
        let same: f64 = nn
            .iter()
            .zip(&inv)
            .filter(|(&z, _)| ref_labels[z] == label)
            .map(|(_, v)| v)
            .sum();
        let ratio = same / all;
        if ratio <= RATIO_FLOOR {
            total -= RATIO_FLOOR.ln();
            continue;
        }
        total -= ratio.ln();
        // ∂loss/∂inv_z = −[same]/S_same + 1/S_all; ∂inv/∂L = −(L u) uᵀ / d³
        for (k, &z) in nn.iter().enumerate() {
            let d = dist[k];
            if d <= DIST_EPS {
                continue;
            }
            let coef = if ref_labels[z] == label {
                -1.0 / same
            } else {
                0.0
            } + 1.0 / all;
            let c = coef * (-1.0 / (d * d * d));
            let u: Vec<f64> = x.iter().zip(&refs[z]).map(|(a, b)| a - b).collect();
            for (i, lu) in px.iter().zip(&projected[z]).map(|(a, b)| a - b).enumerate() {
                let row = &mut grad[i * proj.cols..(i + 1) * proj.cols];
                for (g, uj) in row.iter_mut().zip(&u) {
                    *g += c * lu * uj;
                }
            }
        }
    }
    let n = queries.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (total / n, grad)
}

/// Trains the projection with full-batch Adam; neighbour sets are recomputed
/// every epoch. Returns the projection and the loss at each epoch (before
/// that epoch's update), followed by the final loss.
pub fn train_metric(
    queries: &[Vec<f64>],
    labels: &[usize],
    refs: &[Vec<f64>],
    ref_labels: &[usize],
    cfg: &MetricConfig,
) -> Result<(Projection, Vec<f64>)> {
    if queries.is_empty()
        || refs.is_empty()
        || queries.len() != labels.len()
        || refs.len() != ref_labels.len()
    {
        return Err(Error::Domain(
            "metric training needs labelled queries and references".into(),
        ));
    }
    let e = refs[0].len();
    if queries.iter().chain(refs).any(|v| v.len() != e) {
        return Err(Error::Domain("feature dimensions differ".into()));
    }
    if cfg.rank == 0 || cfg.rank > e {
        return Err(Error::Domain(format!(
            "rank {} must lie in 1..={e}",
            cfg.rank
        )));
    }
    if cfg.neighbors == 0 || cfg.neighbors > refs.len() {
        return Err(Error::Domain(format!(
            "{} neighbours requested from {} references",
            cfg.neighbors,
            refs.len()
        )));
    }
    let mut proj = Projection::random(cfg.rank, e, cfg.seed);
    let mut adam = Adam::new(proj.data.len());
    let lr = vec![cfg.lr; proj.data.len()];
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        let (loss, grad) = loss_and_grad(&proj, queries, labels, refs, ref_labels, cfg.neighbors);
        history.push(loss);
        adam.step(&mut proj.data, &grad, &lr);
    }
    history.push(loss_and_grad(&proj, queries, labels, refs, ref_labels, cfg.neighbors).0);
    Ok((proj, history))
}
