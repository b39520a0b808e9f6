//! Desk-scale synthetic pipeline: data, reference models, probes and
//! static merging baselines.

pub mod baselines;
pub mod config;
pub mod fit;
pub mod pipeline;
pub mod probes;
pub mod rng;
pub mod synth;
pub mod workbench;

pub use config::Config;
pub use fit::{accuracy, fit, FitConfig};
pub use synth::{gen_tasks, Dataset, SyntheticSpec, SyntheticTask};
pub use workbench::{HarnessConfig, Workbench};
