//! Compressed task switches for dynamic model merging.
//!
//! Task vectors (fine-tuned minus base weights) are sparsified and
//! quantized, either by fixed rules ([`tswitch`]) or by learned gates and
//! bit-widths ([`trainer`]), stored in a bit-exact grouped sparse format
//! ([`codec`]) and merged per input by nearest-neighbour voting over
//! exemplar features ([`merge`]). The [`harness`] module provides a small
//! synthetic multi-task setup that exercises the whole pipeline.

pub mod align;
pub mod autodiff;
pub mod bas;
pub mod codec;
pub mod error;
pub mod harness;
pub mod lgs;
pub mod merge;
pub mod optim;
pub mod trainer;
pub mod tswitch;
pub mod vector;

pub use error::{CodecError, Error, Result};
pub use vector::{diff, Module, ParamSet, TaskVector};
