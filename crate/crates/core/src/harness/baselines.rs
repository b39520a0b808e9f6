//! Static merges used as comparison rows.

use crate::error::{Error, Result};
use crate::vector::{ParamSet, TaskVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StaticMerge {
    /// `θ + (1/K)·Στ_k`.
    WeightAverage,
    /// `θ + λ·Στ_k`.
    TaskArithmetic { lambda: f64 },
}

impl StaticMerge {
    pub fn name(&self) -> String {
        match self {
            StaticMerge::WeightAverage => "weight-average".into(),
            StaticMerge::TaskArithmetic { lambda } => format!("task-arithmetic(lambda={lambda})"),
        }
    }
}

pub fn static_merge(
    base: &ParamSet,
    vectors: &[TaskVector],
    mode: StaticMerge,
) -> Result<ParamSet> {
    if vectors.is_empty() {
        return Err(Error::Config("no task vectors to merge".into()));
    }
    let scale = match mode {
        StaticMerge::WeightAverage => 1.0 / vectors.len() as f64,
        StaticMerge::TaskArithmetic { lambda } => lambda,
    };
    let mut merged = base.clone();
    for tv in vectors {
        merged = merged.add_scaled(&tv.params, scale)?;
    }
    Ok(merged)
}

/// Scaling grid searched for the best task-arithmetic coefficient.
pub const LAMBDA_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
