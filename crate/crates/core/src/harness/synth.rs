//! Synthetic multi-task classification data.
//!
//! Task `k` occupies its own region of input space (a random offset of norm
//! `task_sep`). Inside it, `classes` Gaussian clusters sit at random
//! directions of norm `class_sep` from the offset. Cluster `c` carries the
//! pretext label `c`; the task's label is `permutation[c]`, a transposition of
//! two classes that differs between tasks.

use std::fs::{self, File};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::harness::rng::{rng_for, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub tasks: usize,
    pub dim: usize,
    pub classes: usize,
    pub train: usize,
    pub test: usize,
    pub task_sep: f64,
    pub class_sep: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            tasks: 3,
            dim: 16,
            classes: 4,
            train: 2000,
            test: 500,
            task_sep: 8.0,
            class_sep: 6.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

/// Inputs with task labels and pretext labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub label: Vec<usize>,
    pub pretext: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Same inputs labelled with the pretext labels.
    pub fn with_pretext_labels(&self) -> Dataset {
        Dataset {
            x: self.x.clone(),
            label: self.pretext.clone(),
            pretext: self.pretext.clone(),
        }
    }

    pub fn concat(parts: &[&Dataset]) -> Dataset {
        let mut out = Dataset::default();
        for p in parts {
            out.x.extend(p.x.iter().cloned());
            out.label.extend(&p.label);
            out.pretext.extend(&p.pretext);
        }
        out
    }

    /// CSV with columns `x0..x{d-1},label,pretext`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(File::create(path)?);
        let d = self.x.first().map_or(0, Vec::len);
        let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        header.push("pretext".into());
        w.write_record(&header)?;
        for ((x, y), p) in self.x.iter().zip(&self.label).zip(&self.pretext) {
            let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            row.push(y.to_string());
            row.push(p.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout written by [`Dataset::write_csv`]; the `pretext`
    /// column is optional and defaults to the label.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let label_col = headers
            .iter()
            .position(|h| h == "label")
            .ok_or_else(|| Error::Config("dataset CSV has no `label` column".into()))?;
        let pretext_col = headers.iter().position(|h| h == "pretext");
        let feature_cols: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with('x'))
            .map(|(i, _)| i)
            .collect();
        let mut ds = Dataset::default();
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number `{}` in dataset", &rec[i])))
            };
            ds.x.push(
                feature_cols
                    .iter()
                    .map(|&i| num(i))
                    .collect::<Result<_>>()?,
            );
            let label = num(label_col)? as usize;
            ds.label.push(label);
            ds.pretext.push(match pretext_col {
                Some(c) => num(c)? as usize,
                None => label,
            });
        }
        Ok(ds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub id: String,
    pub permutation: Vec<usize>,
    pub train: Dataset,
    pub test: Dataset,
}

/// Class swap used by task `k`: classes `k mod C` and `(k+1) mod C`.
pub fn task_permutation(k: usize, classes: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..classes).collect();
    if classes > 1 {
        p.swap(k % classes, (k + 1) % classes);
    }
    p
}

fn random_direction<R: Rng>(rng: &mut R, dim: usize, norm: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| norm * x / n).collect()
}

pub fn gen_tasks(spec: &SyntheticSpec) -> Result<Vec<SyntheticTask>> {
    if spec.tasks == 0 || spec.dim == 0 || spec.classes < 2 {
        return Err(Error::Config(
            "need at least one task, one dimension and two classes".into(),
        ));
    }
    if spec.train == 0 || spec.test == 0 {
        return Err(Error::Config(
            "train and test sizes must be positive".into(),
        ));
    }
    let mut rng = rng_for(spec.seed, stream::DATA);
    let mut tasks = Vec::with_capacity(spec.tasks);
    for k in 0..spec.tasks {
        let offset = random_direction(&mut rng, spec.dim, spec.task_sep);
        let means: Vec<Vec<f64>> = (0..spec.classes)
            .map(|_| {
                random_direction(&mut rng, spec.dim, spec.class_sep)
                    .iter()
                    .zip(&offset)
                    .map(|(a, b)| a + b)
                    .collect()
            })
            .collect();
        let permutation = task_permutation(k, spec.classes);
        let mut sample = |count: usize| {
            let mut ds = Dataset::default();
            for i in 0..count {
                let c = i % spec.classes;
                let x = means[c]
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + spec.noise * z
                    })
                    .collect();
                ds.x.push(x);
                ds.label.push(permutation[c]);
                ds.pretext.push(c);
            }
            ds
        };
        let train = sample(spec.train);
        let test = sample(spec.test);
        tasks.push(SyntheticTask {
            id: format!("task{k}"),
            permutation,
            train,
            test,
        });
    }
    Ok(tasks)
}

/// Writes `<id>.train.csv` and `<id>.test.csv` per task into `dir`.
pub fn write_tasks(dir: impl AsRef<Path>, tasks: &[SyntheticTask]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for t in tasks {
        t.train.write_csv(dir.join(format!("{}.train.csv", t.id)))?;
        t.test.write_csv(dir.join(format!("{}.test.csv", t.id)))?;
    }
    Ok(())
}

/// Reads every `<id>.train.csv` / `<id>.test.csv` pair in `dir`, sorted by id.
pub fn read_tasks(dir: impl AsRef<Path>) -> Result<Vec<SyntheticTask>> {
    let dir = dir.as_ref();
    let mut ids: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix(".train.csv"))
                .map(String::from)
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Config(format!(
            "no *.train.csv files in {}",
            dir.display()
        )));
    }
    ids.into_iter()
        .map(|id| {
            let train = Dataset::read_csv(dir.join(format!("{id}.train.csv")))?;
            let test = Dataset::read_csv(dir.join(format!("{id}.test.csv")))?;
            let classes = train
                .label
                .iter()
                .chain(&train.pretext)
                .max()
                .map_or(0, |m| m + 1);
            let mut permutation: Vec<usize> = (0..classes).collect();
            for (&p, &y) in train.pretext.iter().zip(&train.label) {
                permutation[p] = y;
            }
            Ok(SyntheticTask {
                id,
                permutation,
                train,
                test,
            })
        })
        .collect()
}
