//! Reference index: per-task centers plus an optional learned projection.
//!
//! File layout (little-endian): `"TSWI"` · version u8 · header len u32 ·
//! header { K u32 · E u32 · e u32 · r u32 · K × (id len u16 · id UTF-8) } ·
//! centers `K·E × e` f32 · projection `r × e` f32. `r = 0` means plain
//! Euclidean distance.

use std::fs;
use std::path::Path;

use crate::error::{CodecError, Error, Result};
use crate::merge::kmeans::kmeans;
use crate::merge::knn::NeighborSearch;
use crate::merge::metric::{train_metric, MetricConfig, Projection};

pub const MAGIC: &[u8; 4] = b"TSWI";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryIndex {
    pub task_ids: Vec<String>,
    /// References per task.
    pub per_task: usize,
    pub dim: usize,
    /// `K·E` references, task-major.
    pub centers: Vec<Vec<f64>>,
    pub projection: Option<Projection>,
}

fn check_sets(task_ids: &[String], sets: &[Vec<Vec<f64>>]) -> Result<usize> {
    if task_ids.is_empty() || task_ids.len() != sets.len() {
        return Err(Error::Domain("one query set per task is required".into()));
    }
    let dim = sets[0].first().map(Vec::len).unwrap_or(0);
    if dim == 0 || sets.iter().flatten().any(|f| f.len() != dim) {
        return Err(Error::Domain(
            "query features must be non-empty with one dimension".into(),
        ));
    }
    Ok(dim)
}

fn round_f32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x as f32)).collect()
}

impl QueryIndex {
    /// Every query is a reference (plain nearest-neighbour voting).
    pub fn from_queries(task_ids: &[String], sets: &[Vec<Vec<f64>>]) -> Result<Self> {
        let dim = check_sets(task_ids, sets)?;
        let per_task = sets[0].len();
        if sets.iter().any(|s| s.len() != per_task) {
            return Err(Error::Domain("query sets must have equal sizes".into()));
        }
        Ok(Self {
            task_ids: task_ids.to_vec(),
            per_task,
            dim,
            centers: sets.iter().flatten().map(|f| round_f32(f)).collect(),
            projection: None,
        })
    }

    /// `per_task` k-means centers per task; task `k` is seeded with `seed + k`.
    pub fn from_centers(
        task_ids: &[String],
        sets: &[Vec<Vec<f64>>],
        per_task: usize,
        seed: u64,
    ) -> Result<Self> {
        let dim = check_sets(task_ids, sets)?;
        let mut centers = Vec::with_capacity(per_task * sets.len());
        for (k, set) in sets.iter().enumerate() {
            let km = kmeans(set, per_task, seed.wrapping_add(k as u64))?;
            centers.extend(km.centroids.iter().map(|c| round_f32(c)));
        }
        Ok(Self {
            task_ids: task_ids.to_vec(),
            per_task,
            dim,
            centers,
            projection: None,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.task_ids.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.centers.len()).map(|i| i / self.per_task).collect()
    }

    /// Learns the projection from labelled query sets against the stored
    /// references; returns the loss history.
    pub fn train_metric(&mut self, sets: &[Vec<Vec<f64>>], cfg: &MetricConfig) -> Result<Vec<f64>> {
        check_sets(&self.task_ids, sets)?;
        let queries: Vec<Vec<f64>> = sets.iter().flatten().cloned().collect();
        let labels: Vec<usize> = sets
            .iter()
            .enumerate()
            .flat_map(|(k, s)| vec![k; s.len()])
            .collect();
        let (proj, hist) = train_metric(&queries, &labels, &self.centers, &self.labels(), cfg)?;
        self.projection = Some(proj.to_f32_precision());
        Ok(hist)
    }

    pub fn search(&self) -> Result<NeighborSearch> {
        NeighborSearch::new(
            &self.centers,
            &self.labels(),
            self.num_tasks(),
            self.projection.clone(),
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = Vec::new();
        let r = self.projection.as_ref().map_or(0, |p| p.rows);
        for v in [self.num_tasks(), self.per_task, self.dim, r] {
            header.extend_from_slice(
                &u32::try_from(v)
                    .map_err(|_| bad("count exceeds u32"))?
                    .to_le_bytes(),
            );
        }
        for id in &self.task_ids {
            let len = u16::try_from(id.len()).map_err(|_| bad("task id too long"))?;
            header.extend_from_slice(&len.to_le_bytes());
            header.extend_from_slice(id.as_bytes());
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.centers.iter().flatten() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        if let Some(p) = &self.projection {
            for v in &p.data {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| bad("truncated index"))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(bad("missing TSWI magic"));
        }
        if take(1)?[0] != VERSION {
            return Err(bad("unsupported index version"));
        }
        let header_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let header = take(header_len)?;
        let mut h = 0usize;
        let mut hu32 = || -> Result<usize> {
            let s = header
                .get(h..h + 4)
                .ok_or_else(|| bad("truncated index header"))?;
            h += 4;
            Ok(u32::from_le_bytes(s.try_into().unwrap()) as usize)
        };
        let (k, per_task, dim, r) = (hu32()?, hu32()?, hu32()?, hu32()?);
        if k == 0 || per_task == 0 || dim == 0 {
            return Err(bad("index header has a zero count"));
        }
        let mut task_ids = Vec::with_capacity(k);
        for _ in 0..k {
            let len_bytes = header
                .get(h..h + 2)
                .ok_or_else(|| bad("truncated index header"))?;
            let len = u16::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            h += 2;
            let id = header
                .get(h..h + len)
                .ok_or_else(|| bad("truncated index header"))?;
            h += len;
            task_ids.push(String::from_utf8(id.to_vec()).map_err(|_| bad("task id is not UTF-8"))?);
        }
        if h != header.len() {
            return Err(bad("index header length mismatch"));
        }
        let mut floats = |count: usize| -> Result<Vec<f64>> {
            let raw = take(count.checked_mul(4).ok_or_else(|| bad("index too large"))?)?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect())
        };
        let flat = floats(k * per_task * dim)?;
        let centers: Vec<Vec<f64>> = flat.chunks(dim).map(<[f64]>::to_vec).collect();
        let projection = if r > 0 {
            Some(Projection::new(r, dim, floats(r * dim)?)?)
        } else {
            None
        };
        if pos != bytes.len() {
            return Err(bad("trailing bytes in index"));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(bad("non-finite center"));
        }
        Ok(Self {
            task_ids,
            per_task,
            dim,
            centers,
            projection,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn bad(reason: &str) -> Error {
    CodecError::Container(reason.to_string()).into()
}
