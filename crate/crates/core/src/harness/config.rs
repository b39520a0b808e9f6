//! Flat `key = value` configuration with typed lookups.
//!
//! Blank lines and lines starting with `#` are ignored. Later assignments
//! (including command-line overrides) replace earlier ones.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::align::PerfLoss;
use crate::error::{Error, Result};
use crate::harness::workbench::HarnessConfig;
use crate::merge::MetricConfig;
use crate::trainer::TrainConfig;

/// Every key understood by [`Config`].
pub const KEYS: &[&str] = &[
    "seed",
    "tasks",
    "dim",
    "classes",
    "train_size",
    "test_size",
    "task_sep",
    "class_sep",
    "noise",
    "hidden",
    "activation",
    "pretrain_steps",
    "pretrain_batch",
    "pretrain_lr",
    "pretrain_optimizer",
    "finetune_steps",
    "finetune_batch",
    "finetune_lr",
    "finetune_optimizer",
    "exemplars",
    "ppl",
    "lambda",
    "temp_T",
    "steps",
    "batch",
    "lr_lgs",
    "lr_bas",
    "clip_norm",
    "alpha",
    "neighbors",
    "centers",
    "rank",
    "metric_epochs",
    "metric_lr",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Sets `key` only when `value` is present.
    pub fn set_opt<T: Display>(&mut self, key: &str, value: Option<T>) -> Result<()> {
        match value {
            Some(v) => self.set(key, v),
            None => Ok(()),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("cannot parse `{v}` for key `{key}`")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }

    pub fn harness(&self) -> Result<HarnessConfig> {
        let mut h = HarnessConfig::default();
        let d = &mut h.data;
        d.seed = self.get_or("seed", d.seed)?;
        d.tasks = self.get_or("tasks", d.tasks)?;
        d.dim = self.get_or("dim", d.dim)?;
        d.classes = self.get_or("classes", d.classes)?;
        d.train = self.get_or("train_size", d.train)?;
        d.test = self.get_or("test_size", d.test)?;
        d.task_sep = self.get_or("task_sep", d.task_sep)?;
        d.class_sep = self.get_or("class_sep", d.class_sep)?;
        d.noise = self.get_or("noise", d.noise)?;
        h.hidden = self.get_or("hidden", h.hidden)?;
        h.activation = self.get_or("activation", h.activation)?;
        let p = &mut h.pretrain;
        p.steps = self.get_or("pretrain_steps", p.steps)?;
        p.batch = self.get_or("pretrain_batch", p.batch)?;
        p.lr = self.get_or("pretrain_lr", p.lr)?;
        p.optimizer = self.get_or("pretrain_optimizer", p.optimizer)?;
        let f = &mut h.fine_tune;
        f.steps = self.get_or("finetune_steps", f.steps)?;
        f.batch = self.get_or("finetune_batch", f.batch)?;
        f.lr = self.get_or("finetune_lr", f.lr)?;
        f.optimizer = self.get_or("finetune_optimizer", f.optimizer)?;
        h.exemplars = self.get_or("exemplars", h.exemplars)?;
        Ok(h)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let mut t = TrainConfig {
            seed: self.seed()?,
            ..Default::default()
        };
        let temp = self.get_or("temp_T", PerfLoss::KL_TEMP)?;
        if !(temp > 0.0) {
            return Err(Error::Config("temp_T must be positive".into()));
        }
        if let Some(name) = self.get::<String>("ppl")? {
            t.ppl = PerfLoss::parse(&name, temp)?;
        } else {
            t.ppl = PerfLoss::Kl { temp };
        }
        t.lambda = self.get_or("lambda", t.ppl.default_lambda())?;
        t.steps = self.get_or("steps", t.steps)?;
        t.batch = self.get_or("batch", t.batch)?;
        t.lr_lgs = self.get_or("lr_lgs", t.lr_lgs)?;
        t.lr_bas = self.get_or("lr_bas", t.lr_bas)?;
        t.clip_norm = self.get_or("clip_norm", t.clip_norm)?;
        Ok(t)
    }

    pub fn metric(&self) -> Result<MetricConfig> {
        let d = MetricConfig::default();
        Ok(MetricConfig {
            rank: self.get_or("rank", d.rank)?,
            neighbors: self.get_or("neighbors", d.neighbors)?,
            epochs: self.get_or("metric_epochs", d.epochs)?,
            lr: self.get_or("metric_lr", d.lr)?,
            seed: self.seed()?,
        })
    }
}
