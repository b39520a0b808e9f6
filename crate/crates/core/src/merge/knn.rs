//! Exhaustive nearest-reference voting.

use crate::error::{Error, Result};
use crate::merge::metric::Projection;

/// Indices of the `c` references closest to `x` (Euclidean), ties toward the
/// lower index.
pub fn nearest_references(x: &[f64], refs: &[Vec<f64>], c: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            (
                x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                i,
            )
        })
        .collect();
    let c = c.min(d.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if c < d.len() {
        d.select_nth_unstable_by(c, cmp);
        d.truncate(c);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

/// Neighbour counts per task; weights are `counts[k] / neighbors`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaskWeights {
    pub counts: Vec<usize>,
    pub neighbors: usize,
}

impl TaskWeights {
    pub fn weights(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.neighbors as f64)
            .collect()
    }

    pub fn one_hot(task: usize, num_tasks: usize) -> Self {
        let mut counts = vec![0; num_tasks];
        counts[task] = 1;
        Self {
            counts,
            neighbors: 1,
        }
    }
}

/// References with task labels, optionally pre-projected by a metric.
#[derive(Debug, Clone)]
pub struct NeighborSearch {
    projection: Option<Projection>,
    projected: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_tasks: usize,
}

impl NeighborSearch {
    pub fn new(
        refs: &[Vec<f64>],
        labels: &[usize],
        num_tasks: usize,
        projection: Option<Projection>,
    ) -> Result<Self> {
        if refs.is_empty() || refs.len() != labels.len() {
            return Err(Error::Domain(
                "references and labels must be non-empty and aligned".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_tasks) {
            return Err(Error::Domain(format!(
                "task label {bad} out of range for {num_tasks} tasks"
            )));
        }
        let e = refs[0].len();
        if refs.iter().any(|r| r.len() != e) || projection.as_ref().is_some_and(|p| p.cols != e) {
            return Err(Error::Domain("reference dimensions differ".into()));
        }
        let projected = match &projection {
            Some(p) => refs.iter().map(|r| p.apply(r)).collect(),
            None => refs.to_vec(),
        };
        Ok(Self {
            projection,
            projected,
            labels: labels.to_vec(),
            num_tasks,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Task vote counts among the `c` nearest references to `x`.
    pub fn weights(&self, x: &[f64], c: usize) -> Result<TaskWeights> {
        if c == 0 || c > self.len() {
            return Err(Error::Domain(format!(
                "{c} neighbours requested from {} references",
                self.len()
            )));
        }
        let q = match &self.projection {
            Some(p) => p.apply(x),
            None => x.to_vec(),
        };
        let mut counts = vec![0; self.num_tasks];
        for i in nearest_references(&q, &self.projected, c) {
            counts[self.labels[i]] += 1;
        }
        Ok(TaskWeights {
            counts,
            neighbors: c,
        })
    }
}
