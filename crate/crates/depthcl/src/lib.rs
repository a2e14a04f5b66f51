//! File formats, sequence runner, reports and command-line front end for
//! continual depth-completion benchmarks built on `depthcl-core`.

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod harness;
pub mod record;
pub mod report;
pub mod sweep;

pub use error::{Error, FormatError, Result};
