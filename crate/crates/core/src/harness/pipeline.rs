//! File-level plumbing shared by the command-line tool: the models file,
//! bundles of compressed vectors, query sets and CSV reports.
//!
//! A models file is a `TSWC` container whose first task is `base` and whose
//! remaining tasks are fine-tuned weights, all stored as raw `f32`. The base
//! entry carries `widths`, `activation` and `seed` metadata.

use std::io::Write;
use std::path::Path;

use crate::autodiff::mlp::MlpSpec;
use crate::codec::container::{load_tasks, save_tasks};
use crate::codec::{FormatPolicy, StoredTask};
use crate::error::{Error, Result};
use crate::harness::fit::accuracy;
use crate::harness::rng::{seed_for, stream};
use crate::harness::synth::{Dataset, SyntheticTask};
use crate::harness::workbench::{exemplars, Workbench};
use crate::merge::{build_query_set, Merger, QueryIndex};
use crate::trainer::{train, Problem, TrainConfig, TrainOutcome};
use crate::vector::{diff, ParamSet, TaskVector};

pub const BASE_ID: &str = "base";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub spec: MlpSpec,
    pub seed: u64,
    pub base: ParamSet,
    /// `(task id, fine-tuned weights)` in task order.
    pub tasks: Vec<(String, ParamSet)>,
}

fn round_params(p: &ParamSet) -> Result<ParamSet> {
    StoredTask::from_params("", p).to_params()
}

impl ModelFile {
    /// Weights are rounded to `f32`, so the in-memory copy equals what
    /// [`ModelFile::load`] returns.
    pub fn from_workbench(wb: &Workbench) -> Result<Self> {
        Ok(Self {
            spec: wb.spec.clone(),
            seed: wb.config.seed(),
            base: round_params(&wb.base)?,
            tasks: wb
                .task_ids()
                .into_iter()
                .zip(&wb.fine_tuned)
                .map(|(id, p)| Ok((id, round_params(p)?)))
                .collect::<Result<_>>()?,
        })
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn position(&self, task_id: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|(id, _)| id == task_id)
            .ok_or_else(|| Error::Config(format!("unknown task `{task_id}`")))
    }

    pub fn task_vectors(&self) -> Result<Vec<TaskVector>> {
        self.tasks
            .iter()
            .map(|(id, p)| diff(id.clone(), p, &self.base))
            .collect()
    }

    pub fn to_stored(&self) -> Vec<StoredTask> {
        let mut base = StoredTask::from_params(BASE_ID, &self.base);
        base.set_meta("role", "base");
        base.set_meta(
            "widths",
            self.spec
                .widths
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        base.set_meta("activation", self.spec.activation);
        base.set_meta("seed", self.seed);
        let mut out = vec![base];
        for (id, p) in &self.tasks {
            let mut t = StoredTask::from_params(id.clone(), p);
            t.set_meta("role", "fine-tuned");
            out.push(t);
        }
        out
    }

    pub fn from_stored(stored: &[StoredTask]) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("models file: {msg}"));
        let base = stored
            .first()
            .filter(|t| t.task_id == BASE_ID)
            .ok_or_else(|| bad("first task must be `base`"))?;
        let widths = base
            .meta("widths")
            .ok_or_else(|| bad("missing widths"))?
            .split(',')
            .map(|w| w.parse().map_err(|_| bad("bad widths")))
            .collect::<Result<Vec<usize>>>()?;
        let activation = base
            .meta("activation")
            .ok_or_else(|| bad("missing activation"))?
            .parse()?;
        let spec = MlpSpec::new(widths, activation)?;
        let seed = base
            .meta("seed")
            .unwrap_or("0")
            .parse()
            .map_err(|_| bad("bad seed"))?;
        let base_params = base.to_params()?;
        spec.check_params(&base_params)?;
        let tasks = stored[1..]
            .iter()
            .map(|t| {
                let p = t.to_params()?;
                spec.check_params(&p)?;
                Ok((t.task_id.clone(), p))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            seed,
            base: base_params,
            tasks,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_tasks(path, &self.to_stored(), FormatPolicy::Auto).map(|_| ())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_stored(&load_tasks(path)?)
    }

    /// Exemplars of task `k`, drawn from its training split.
    pub fn exemplars(
        &self,
        tasks: &[SyntheticTask],
        k: usize,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        let id = &self.tasks[k].0;
        let task = tasks
            .iter()
            .find(|t| &t.id == id)
            .ok_or_else(|| Error::Config(format!("no data for task `{id}`")))?;
        Ok(exemplars(task, n, seed, k))
    }

    /// Penultimate base features of every task's exemplars.
    pub fn query_sets(
        &self,
        tasks: &[SyntheticTask],
        n: usize,
        seed: u64,
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        (0..self.tasks.len())
            .map(|k| {
                Ok(build_query_set(
                    &self.spec,
                    &self.base,
                    &self.exemplars(tasks, k, n, seed)?,
                ))
            })
            .collect()
    }

    /// Accuracy of `base + τ` on `data`.
    pub fn accuracy_with(&self, tv: &TaskVector, data: &Dataset) -> Result<f64> {
        Ok(accuracy(
            &self.spec,
            &self.base.add_scaled(&tv.params, 1.0)?,
            data,
        ))
    }
}

/// FlexSwitch compression of task `k`. Exemplars are drawn with
/// `harness_seed`; the optimizer's batches use a per-task seed derived
/// from `cfg.seed`.
pub fn compress_task(
    models: &ModelFile,
    data: &[SyntheticTask],
    k: usize,
    exemplar_count: usize,
    harness_seed: u64,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let ex = models.exemplars(data, k, exemplar_count, harness_seed)?;
    let (id, fine_tuned) = &models.tasks[k];
    let problem = Problem::new(&models.spec, &models.base, fine_tuned, &ex, id)?;
    let task_cfg = TrainConfig {
        seed: seed_for(cfg.seed, stream::COMPRESS + k as u64),
        ..cfg.clone()
    };
    let mut out = train(&problem, &task_cfg)?;
    out.compressed.set_meta("seed", cfg.seed);
    Ok(out)
}

/// Task vectors from a bundle, ordered as `task_ids`.
pub fn bundle_vectors(bundle: &[StoredTask], task_ids: &[String]) -> Result<Vec<TaskVector>> {
    task_ids
        .iter()
        .map(|id| {
            bundle
                .iter()
                .find(|t| &t.task_id == id)
                .ok_or_else(|| Error::Config(format!("bundle has no task `{id}`")))?
                .to_task_vector()
        })
        .collect()
}

/// Per-dataset accuracy of the dynamically merged model.
pub fn merge_accuracy(merger: &Merger<'_>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (x, &y) in data.x.iter().zip(&data.label) {
        hits += usize::from(merger.predict(x)? == y);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Convenience wrapper: merger over `vectors` with `index`.
pub fn merger<'a>(
    models: &'a ModelFile,
    vectors: &[TaskVector],
    index: &QueryIndex,
    neighbors: usize,
) -> Result<Merger<'a>> {
    Merger::new(&models.spec, &models.base, vectors, index, neighbors)
}

/// Writes a CSV report; `None` writes to standard output.
pub fn write_report<I, R, S>(path: Option<&Path>, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
