//! The default desk-scale setup: synthetic tasks, a pretrained base model,
//! per-task fine-tuned models and unlabeled exemplars.

use rand::seq::index::sample;

use crate::autodiff::mlp::{Activation, MlpSpec};
use crate::error::Result;
use crate::harness::fit::{accuracy, fit, FitConfig, Optimizer};
use crate::harness::rng::{rng_for, stream};
use crate::harness::synth::{gen_tasks, Dataset, SyntheticSpec, SyntheticTask};
use crate::vector::{diff, ParamSet, TaskVector};

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub data: SyntheticSpec,
    pub hidden: usize,
    pub activation: Activation,
    pub pretrain: FitConfig,
    pub fine_tune: FitConfig,
    /// Unlabeled exemplars drawn per task for compression and retrieval.
    pub exemplars: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            data: SyntheticSpec::default(),
            hidden: 32,
            activation: Activation::Tanh,
            pretrain: FitConfig {
                steps: 600,
                batch: 64,
                lr: 0.01,
                optimizer: Optimizer::Adam,
            },
            fine_tune: FitConfig {
                steps: 300,
                batch: 64,
                lr: 0.05,
                optimizer: Optimizer::Sgd,
            },
            exemplars: 100,
        }
    }
}

impl HarnessConfig {
    pub fn seed(&self) -> u64 {
        self.data.seed
    }

    pub fn mlp(&self) -> Result<MlpSpec> {
        MlpSpec::new(
            vec![self.data.dim, self.hidden, self.data.classes],
            self.activation,
        )
    }
}

/// Everything downstream commands need, built deterministically from a seed.
#[derive(Debug, Clone)]
pub struct Workbench {
    pub config: HarnessConfig,
    pub spec: MlpSpec,
    pub tasks: Vec<SyntheticTask>,
    pub base: ParamSet,
    pub fine_tuned: Vec<ParamSet>,
}

/// Base model: fit on the union of all tasks under the pretext labels.
pub fn pretrain(
    spec: &MlpSpec,
    tasks: &[SyntheticTask],
    cfg: &FitConfig,
    seed: u64,
) -> Result<ParamSet> {
    let init = spec.init(&mut rng_for(seed, stream::INIT));
    let parts: Vec<&Dataset> = tasks.iter().map(|t| &t.train).collect();
    let union = Dataset::concat(&parts).with_pretext_labels();
    fit(
        spec,
        &init,
        &union,
        cfg,
        &mut rng_for(seed, stream::PRETRAIN),
    )
}

pub fn fine_tune(
    spec: &MlpSpec,
    base: &ParamSet,
    task: &Dataset,
    cfg: &FitConfig,
    seed: u64,
    k: usize,
) -> Result<ParamSet> {
    fit(
        spec,
        base,
        task,
        cfg,
        &mut rng_for(seed, stream::FINE_TUNE + k as u64),
    )
}

/// `n` distinct training inputs of task `k` (all of them when fewer exist).
pub fn exemplars(task: &SyntheticTask, n: usize, seed: u64, k: usize) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, stream::EXEMPLARS + k as u64);
    let n = n.min(task.train.len());
    let mut idx = sample(&mut rng, task.train.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| task.train.x[i].clone()).collect()
}

impl Workbench {
    pub fn build(config: &HarnessConfig) -> Result<Self> {
        let tasks = gen_tasks(&config.data)?;
        Self::from_tasks(config, tasks)
    }

    pub fn from_tasks(config: &HarnessConfig, tasks: Vec<SyntheticTask>) -> Result<Self> {
        let spec = config.mlp()?;
        let seed = config.seed();
        let base = pretrain(&spec, &tasks, &config.pretrain, seed)?;
        let fine_tuned = tasks
            .iter()
            .enumerate()
            .map(|(k, t)| fine_tune(&spec, &base, &t.train, &config.fine_tune, seed, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            spec,
            tasks,
            base,
            fine_tuned,
        })
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.id.clone()).collect()
    }

    pub fn task_vectors(&self) -> Result<Vec<TaskVector>> {
        self.tasks
            .iter()
            .zip(&self.fine_tuned)
            .map(|(t, ft)| diff(t.id.clone(), ft, &self.base))
            .collect()
    }

    pub fn exemplars(&self, k: usize) -> Vec<Vec<f64>> {
        exemplars(&self.tasks[k], self.config.exemplars, self.config.seed(), k)
    }

    pub fn test_accuracy(&self, params: &ParamSet, k: usize) -> f64 {
        accuracy(&self.spec, params, &self.tasks[k].test)
    }

    /// Test accuracy of `base + τ` on task `k`.
    pub fn accuracy_with(&self, tv: &TaskVector, k: usize) -> Result<f64> {
        Ok(self.test_accuracy(&self.base.add_scaled(&tv.params, 1.0)?, k))
    }
}
