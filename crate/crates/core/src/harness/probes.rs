//! Sensitivity probes: prune, binarize or rescale one unit at a time and
//! record the accuracy drop against the fine-tuned model.

use crate::error::Result;
use crate::tswitch::{build_switch, pulse_mask, TaskSwitch};
use crate::vector::{Module, ParamSet, TaskVector};

/// One probed unit. `drop` is fine-tuned minus probed accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub task: String,
    pub unit: String,
    pub accuracy: f64,
    pub drop: f64,
}

impl ProbeRow {
    pub const HEADER: [&'static str; 4] = ["task", "unit", "accuracy", "drop"];
}

/// One point of a knob-scaling curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRow {
    pub task: String,
    pub eta: f64,
    pub accuracy: f64,
    pub drop: f64,
}

impl ScaleRow {
    pub const HEADER: [&'static str; 4] = ["task", "eta", "accuracy", "drop"];
}

/// `η ∈ {0.1, 0.2, …, 2.0}`.
pub fn eta_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 10.0).collect()
}

fn replace_module(tv: &TaskVector, unit: usize, values: Vec<f64>) -> Result<TaskVector> {
    let modules = tv
        .modules()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if i == unit {
                Module::new(m.name.clone(), values.clone())
            } else {
                m.clone()
            }
        })
        .collect();
    Ok(TaskVector {
        task_id: tv.task_id.clone(),
        params: ParamSet::new(modules)?,
    })
}

fn probe_units<F, E>(tv: &TaskVector, eval: &E, transform: F) -> Result<Vec<ProbeRow>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    E: Fn(&TaskVector) -> Result<f64>,
{
    let reference = eval(tv)?;
    tv.modules()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let probed = replace_module(tv, i, transform(&m.values)?)?;
            let accuracy = eval(&probed)?;
            Ok(ProbeRow {
                task: tv.task_id.clone(),
                unit: m.name.clone(),
                accuracy,
                drop: reference - accuracy,
            })
        })
        .collect()
}

/// Magnitude pruning at rate `alpha` of one module at a time.
pub fn probe_sparsity<E>(tv: &TaskVector, alpha: f64, eval: E) -> Result<Vec<ProbeRow>>
where
    E: Fn(&TaskVector) -> Result<f64>,
{
    probe_units(tv, &eval, |v| {
        let mask = pulse_mask(v, alpha)?;
        Ok(v.iter()
            .zip(&mask)
            .map(|(&x, &m)| if m { x } else { 0.0 })
            .collect())
    })
}

/// Sign binarization (no pruning) of one module at a time.
pub fn probe_precision<E>(tv: &TaskVector, eval: E) -> Result<Vec<ProbeRow>>
where
    E: Fn(&TaskVector) -> Result<f64>,
{
    probe_units(tv, &eval, |v| {
        Ok(build_switch("probe", v, 0.0)?.reconstruct())
    })
}

/// Binarizes every module and scales all knobs by each `η`.
pub fn probe_scale<E>(tv: &TaskVector, etas: &[f64], eval: E) -> Result<Vec<ScaleRow>>
where
    E: Fn(&TaskVector) -> Result<f64>,
{
    let reference = eval(tv)?;
    let switch = TaskSwitch::build(tv, 0.0)?;
    etas.iter()
        .map(|&eta| {
            let mut s = switch.clone();
            s.scale_knobs(eta);
            let accuracy = eval(&s.to_task_vector())?;
            Ok(ScaleRow {
                task: tv.task_id.clone(),
                eta,
                accuracy,
                drop: reference - accuracy,
            })
        })
        .collect()
}

/// The `η` with the smallest drop; ties go to the one closest to 1.
pub fn best_eta(rows: &[ScaleRow]) -> Option<f64> {
    rows.iter()
        .min_by(|a, b| {
            a.drop
                .total_cmp(&b.drop)
                .then((a.eta - 1.0).abs().total_cmp(&(b.eta - 1.0).abs()))
        })
        .map(|r| r.eta)
}
