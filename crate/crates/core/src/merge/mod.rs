//! Inference-time merging of task vectors by nearest-reference voting.

pub mod engine;
pub mod index;
pub mod kmeans;
pub mod knn;
pub mod metric;

pub use engine::{build_query_set, Merger, SparseVectors};
pub use index::QueryIndex;
pub use kmeans::{kmeans, KMeans};
pub use knn::{nearest_references, NeighborSearch, TaskWeights};
pub use metric::{train_metric, MetricConfig, Projection};
