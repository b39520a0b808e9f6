//! Per-input merging: `θ + Σ_k w_k(x)·τ̃_k` with `w` from neighbour votes.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::autodiff::mlp::MlpSpec;
use crate::error::{Error, Result};
use crate::merge::index::QueryIndex;
use crate::merge::knn::{NeighborSearch, TaskWeights};
use crate::vector::{Module, ParamSet, TaskVector};

/// Penultimate features of the base model for each exemplar.
pub fn build_query_set(spec: &MlpSpec, base: &ParamSet, exemplars: &[Vec<f64>]) -> Vec<Vec<f64>> {
    exemplars.iter().map(|x| spec.features(base, x)).collect()
}

/// Non-zero entries of one task vector module.
#[derive(Debug, Clone)]
struct SparseModule {
    idx: Vec<usize>,
    val: Vec<f64>,
}

/// Sparse task vectors aligned with a base parameter set.
#[derive(Debug, Clone)]
pub struct SparseVectors {
    base: ParamSet,
    tasks: Vec<Vec<SparseModule>>,
}

impl SparseVectors {
    pub fn new(base: &ParamSet, vectors: &[TaskVector]) -> Result<Self> {
        let mut tasks = Vec::with_capacity(vectors.len());
        for tv in vectors {
            base.check_aligned(&tv.params)?;
            tasks.push(
                tv.modules()
                    .iter()
                    .map(|m| {
                        let (idx, val) = m
                            .values
                            .iter()
                            .enumerate()
                            .filter(|(_, v)| **v != 0.0)
                            .map(|(i, v)| (i, *v))
                            .unzip();
                        SparseModule { idx, val }
                    })
                    .collect(),
            );
        }
        Ok(Self {
            base: base.clone(),
            tasks,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// `θ + Σ_k (counts_k / C)·τ_k`, touching only the union of supports.
    pub fn merge(&self, w: &TaskWeights) -> Result<ParamSet> {
        if w.counts.len() != self.num_tasks() {
            return Err(Error::ModuleCount {
                expected: self.num_tasks(),
                found: w.counts.len(),
            });
        }
        let weights = w.weights();
        self.merge_weighted(&weights)
    }

    /// `θ + Σ_k weights_k·τ_k` for arbitrary real weights.
    pub fn merge_weighted(&self, weights: &[f64]) -> Result<ParamSet> {
        if weights.len() != self.num_tasks() {
            return Err(Error::ModuleCount {
                expected: self.num_tasks(),
                found: weights.len(),
            });
        }
        let mut modules: Vec<Module> = self.base.modules().to_vec();
        for (task, &wk) in self.tasks.iter().zip(weights) {
            if wk == 0.0 {
                continue;
            }
            for (m, sm) in modules.iter_mut().zip(task) {
                for (&i, &v) in sm.idx.iter().zip(&sm.val) {
                    m.values[i] += wk * v;
                }
            }
        }
        ParamSet::new(modules)
    }
}

/// Dynamic merger over an index; merged weights are cached per vote pattern.
#[derive(Debug)]
pub struct Merger<'a> {
    pub spec: &'a MlpSpec,
    pub vectors: SparseVectors,
    pub search: NeighborSearch,
    pub neighbors: usize,
    cache: Mutex<HashMap<Vec<usize>, ParamSet>>,
}

impl<'a> Merger<'a> {
    pub fn new(
        spec: &'a MlpSpec,
        base: &ParamSet,
        vectors: &[TaskVector],
        index: &QueryIndex,
        neighbors: usize,
    ) -> Result<Self> {
        spec.check_params(base)?;
        if vectors.len() != index.num_tasks() {
            return Err(Error::ModuleCount {
                expected: index.num_tasks(),
                found: vectors.len(),
            });
        }
        if index.dim != spec.feature_dim() {
            return Err(Error::ShapeMismatch {
                module: "index features".into(),
                expected: spec.feature_dim(),
                found: index.dim,
            });
        }
        Ok(Self {
            spec,
            vectors: SparseVectors::new(base, vectors)?,
            search: index.search()?,
            neighbors,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn weights(&self, x: &[f64]) -> Result<TaskWeights> {
        let f = self.spec.features(&self.vectors.base, x);
        self.search.weights(&f, self.neighbors)
    }

    /// Logits of the model merged for input `x`, with the votes used.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, TaskWeights)> {
        let w = self.weights(x)?;
        let mut cache = self.cache.lock().expect("merge cache poisoned");
        if !cache.contains_key(&w.counts) {
            let merged = self.vectors.merge(&w)?;
            cache.insert(w.counts.clone(), merged);
        }
        let logits = self.spec.forward(&cache[&w.counts], x);
        Ok((logits, w))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(crate::autodiff::mlp::argmax(&self.forward(x)?.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::mlp::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vector(base: &ParamSet, rng: &mut ChaCha8Rng, id: &str) -> TaskVector {
        let mods = base
            .modules()
            .iter()
            .map(|m| {
                Module::new(
                    m.name.clone(),
                    m.values
                        .iter()
                        .map(|_| {
                            if rng.random_bool(0.3) {
                                rng.random_range(-1.0..1.0)
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                )
            })
            .collect();
        TaskVector {
            task_id: id.into(),
            params: ParamSet::new(mods).unwrap(),
        }
    }

    #[test]
    fn merge_matches_dense_oracle() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = spec.init(&mut rng);
        let tvs = [
            random_vector(&base, &mut rng, "a"),
            random_vector(&base, &mut rng, "b"),
        ];
        let sv = SparseVectors::new(&base, &tvs).unwrap();
        let w = TaskWeights {
            counts: vec![3, 7],
            neighbors: 10,
        };
        let merged = sv.merge(&w).unwrap();
        for (l, m) in merged.modules().iter().enumerate() {
            for j in 0..m.len() {
                let want = base.modules()[l].values[j]
                    + 0.3 * tvs[0].modules()[l].values[j]
                    + 0.7 * tvs[1].modules()[l].values[j];
                assert!((m.values[j] - want).abs() < 1e-15);
            }
        }
        let one = sv.merge(&TaskWeights::one_hot(1, 2)).unwrap();
        assert_eq!(one, base.add_scaled(&tvs[1].params, 1.0).unwrap());
    }

    #[test]
    fn zero_vectors_give_base_output() {
        let spec = MlpSpec::new(vec![2, 3, 2], Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = spec.init(&mut rng);
        let zero = TaskVector {
            task_id: "z".into(),
            params: base.zeros_like(),
        };
        let ids = vec!["z".to_string()];
        let sets = vec![vec![vec![0.1, 0.2, 0.3], vec![0.0, -0.1, 0.5]]];
        let idx = QueryIndex::from_queries(&ids, &sets).unwrap();
        let m = Merger::new(&spec, &base, &[zero], &idx, 2).unwrap();
        let x = [0.4, -0.7];
        assert_eq!(m.forward(&x).unwrap().0, spec.forward(&base, &x));
    }
}
