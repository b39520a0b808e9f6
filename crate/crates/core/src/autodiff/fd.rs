//! Central finite-difference cross-checks for tape gradients.

/// Per-coordinate comparison between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// `(leaf, coordinate, analytic, numeric, relative error)`.
    pub entries: Vec<(usize, usize, f64, f64, f64)>,
    pub max_rel: f64,
    pub mean_rel: f64,
}

impl FdReport {
    /// Fraction of coordinates whose relative error is within `tol`.
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.entries.is_empty() {
            return 1.0;
        }
        self.entries.iter().filter(|e| e.4 <= tol).count() as f64 / self.entries.len() as f64
    }
}

/// Relative error with an absolute floor so vanishing gradients compare sanely.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `objective` at `leaves`.
pub fn fd_check<F>(
    objective: F,
    leaves: &[Vec<f64>],
    analytic: &[Vec<f64>],
    h: f64,
    floor: f64,
) -> FdReport
where
    F: Fn(&[Vec<f64>]) -> f64,
{
    let mut entries = Vec::new();
    let mut probe = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        for ci in 0..leaf.len() {
            let orig = leaf[ci];
            probe[li][ci] = orig + h;
            let fp = objective(&probe);
            probe[li][ci] = orig - h;
            let fm = objective(&probe);
            probe[li][ci] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[li][ci];
            entries.push((li, ci, a, numeric, relative_error(a, numeric, floor)));
        }
    }
    let max_rel = entries.iter().map(|e| e.4).fold(0.0, f64::max);
    let mean_rel = if entries.is_empty() {
        0.0
    } else {
        entries.iter().map(|e| e.4).sum::<f64>() / entries.len() as f64
    };
    FdReport {
        entries,
        max_rel,
        mean_rel,
    }
}
