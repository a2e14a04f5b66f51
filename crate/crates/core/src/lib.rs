//! Numerical core for benchmarking unsupervised continual learning of depth
//! completion.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std`: a reverse-mode autodiff engine ([`diff`]), pinhole
//! geometry and differentiable image warping ([`geometry`]), the unsupervised
//! depth-completion objective ([`losses`]), a compact encoder-decoder depth
//! network ([`model`]), the continual-learning strategies ([`continual`]),
//! per-frame and sequence-level metrics ([`metrics`]) and a procedural
//! multi-domain scene generator ([`data`]).
//!
//! File formats, configuration, orchestration and the command line live in
//! the `depthcl` companion crate.

#![no_std]
#![forbid(rustdoc::broken_intra_doc_links)]
// `!(x >= 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod continual;
pub mod data;
pub mod diff;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
